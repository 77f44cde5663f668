use crate::error::{contract, Result};
use crate::model::forward::Token;
use crate::model::weights::HybridModel;
use crate::numerics::graph::softmax_in_place;
use crate::numerics::Prng;
use crate::scalar::Scalar;
use crate::tuning::AdaptationBundle;

pub const EOS: Token = 0;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Something that continues a prompt token by token.
pub trait Policy: Sync {
    /// Next-token logits after `context`.
    fn next_logits(&self, context: &[Token]) -> Result<Vec<f64>>;

    /// Longest context the policy accepts.
    fn max_context(&self) -> usize;

    fn greedy(&self, prompt: &[Token], max_new: usize) -> Result<Vec<Token>> {
        decode(self, prompt, max_new, |logits| Ok(argmax(logits)))
    }

    fn sample(
        &self,
        prompt: &[Token],
        max_new: usize,
        temperature: f64,
        rng: &mut Prng,
    ) -> Result<Vec<Token>> {
        if !(temperature > 0.0) {
            return contract(format!("temperature must be positive, got {temperature}"));
        }
        decode(self, prompt, max_new, |logits| {
            let mut p: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
            softmax_in_place(&mut p);
            Ok(rng.categorical(&p))
        })
    }
}

fn decode<P: Policy + ?Sized>(
    policy: &P,
    prompt: &[Token],
    max_new: usize,
    mut pick: impl FnMut(&[f64]) -> Result<Token>,
) -> Result<Vec<Token>> {
    if prompt.is_empty() {
        return contract("prompt must be nonempty");
    }
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new && seq.len() <= policy.max_context() {
        let logits = policy.next_logits(&seq)?;
        let t = pick(&logits)?;
        out.push(t);
        seq.push(t);
        if t == EOS {
            break;
        }
    }
    Ok(out)
}

/// A frozen model with one adaptation applied.
#[derive(Clone, Copy)]
pub struct Adapted<'a, T> {
    pub model: &'a HybridModel<T>,
    pub bundle: &'a AdaptationBundle<T>,
}

impl<T: Scalar> Policy for Adapted<'_, T> {
    fn next_logits(&self, context: &[Token]) -> Result<Vec<f64>> {
        let logits = self.model.logits(context, self.bundle)?;
        Ok(logits
            .row(logits.rows() - 1)
            .iter()
            .map(|x| x.to_f64_lossless())
            .collect())
    }

    fn max_context(&self) -> usize {
        self.model.config().max_seq_len
    }
}

/// Greedy decoding until EOS or `max_new` tokens.
pub fn generate_greedy<T: Scalar>(
    model: &HybridModel<T>,
    prompt: &[Token],
    bundle: &AdaptationBundle<T>,
    max_new: usize,
) -> Result<Vec<Token>> {
    Adapted { model, bundle }.greedy(prompt, max_new)
}

/// `n` independent samples at `temperature`; sample `i` uses stream `i` of `seed`.
pub fn generate_sampled<T: Scalar>(
    model: &HybridModel<T>,
    prompt: &[Token],
    bundle: &AdaptationBundle<T>,
    max_new: usize,
    temperature: f64,
    seed: u64,
    n: usize,
) -> Result<Vec<Vec<Token>>> {
    let policy = Adapted { model, bundle };
    let root = Prng::new(seed);
    (0..n)
        .map(|i| policy.sample(prompt, max_new, temperature, &mut root.derive(i as u64)))
        .collect()
}
