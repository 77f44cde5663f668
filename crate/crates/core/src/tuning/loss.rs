//! Completion-masked cross-entropy with an L2 penalty on the adaptation.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::model::forward::{bind_weights, forward_graph, BoundAdapters, Token};
use crate::model::HybridModel;
use crate::numerics::{Graph, Tensor, Var};
use crate::scalar::Scalar;
use crate::tuning::AdaptationBundle;

/// Prompt/completion pair. Only completion tokens are scored.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainExample {
    pub prompt: Vec<Token>,
    pub completion: Vec<Token>,
}

impl TrainExample {
    pub fn new(prompt: Vec<Token>, completion: Vec<Token>) -> Result<Self> {
        if prompt.is_empty() || completion.is_empty() {
            return contract("train example needs a nonempty prompt and completion");
        }
        Ok(Self { prompt, completion })
    }

    /// Model input: the prompt followed by all but the last completion token.
    pub fn input(&self) -> Vec<Token> {
        let mut seq = self.prompt.clone();
        seq.extend_from_slice(&self.completion[..self.completion.len() - 1]);
        seq
    }

    /// `(position, target)` for every completion token.
    pub fn targets(&self) -> Vec<(usize, usize)> {
        let start = self.prompt.len() - 1;
        self.completion
            .iter()
            .enumerate()
            .map(|(j, &t)| (start + j, t))
            .collect()
    }
}

/// Mean completion cross-entropy of one example, on the graph.
pub fn example_ce<T: Scalar>(
    g: &mut Graph<T>,
    model: &HybridModel<T>,
    weights: &[Var],
    ex: &TrainExample,
    ad: &BoundAdapters,
) -> Result<Var> {
    if ex.prompt.is_empty() || ex.completion.is_empty() {
        return contract("train example needs a nonempty prompt and completion");
    }
    let trace = forward_graph(g, model, weights, &ex.input(), ad)?;
    let ce = g.cross_entropy(trace.logits, &ex.targets())?;
    Ok(g.scale(ce, T::of(1.0 / ex.completion.len() as f64)))
}

/// `(1/N) Σ_i CE_i + λ Σ ‖θ‖²` over the bundle tensors θ, as a graph node.
/// Returns the loss and the bundle leaves in [`AdaptationBundle::tensors`] order.
pub fn loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    model: &HybridModel<T>,
    bundle: &AdaptationBundle<T>,
    examples: &[TrainExample],
    l2_lambda: f64,
    train_bundle: bool,
) -> Result<(Var, Vec<Var>)> {
    if examples.is_empty() {
        return contract("loss needs at least one example");
    }
    let weights = bind_weights(g, model, false);
    let (ad, leaves) = BoundAdapters::bind(g, model, bundle, train_bundle)?;
    let mut total: Option<Var> = None;
    for ex in examples {
        let ce = example_ce(g, model, &weights, ex, &ad)?;
        total = Some(match total {
            None => ce,
            Some(t) => g.add(t, ce)?,
        });
    }
    let mut loss = g.scale(total.expect("nonempty"), T::of(1.0 / examples.len() as f64));
    if l2_lambda != 0.0 {
        for &leaf in &leaves {
            let sq = g.sum_squares(leaf);
            let sq = g.scale(sq, T::of(l2_lambda));
            loss = g.add(loss, sq)?;
        }
    }
    Ok((loss, leaves))
}

/// Completion loss value.
pub fn completion_loss<T: Scalar>(
    model: &HybridModel<T>,
    bundle: &AdaptationBundle<T>,
    examples: &[TrainExample],
    l2_lambda: f64,
) -> Result<T> {
    let mut g = Graph::new();
    let (loss, _) = loss_graph(&mut g, model, bundle, examples, l2_lambda, false)?;
    Ok(g.value(loss).item())
}

/// Loss and its gradient with respect to every bundle tensor.
pub fn loss_and_grad<T: Scalar>(
    model: &HybridModel<T>,
    bundle: &AdaptationBundle<T>,
    examples: &[TrainExample],
    l2_lambda: f64,
) -> Result<(T, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let (loss, leaves) = loss_graph(&mut g, model, bundle, examples, l2_lambda, true)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Training(format!("loss is {value}")));
    }
    let grads = g.backward(loss)?;
    Ok((
        value,
        leaves.iter().map(|&v| grads.wrt(v).clone()).collect(),
    ))
}
