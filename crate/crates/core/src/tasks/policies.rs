//! Hand-built policies with known behaviour, used as test fixtures and for
//! calibrating the evaluation harness.

use crate::error::Result;
use crate::model::{Policy, Token, EOS};
use crate::tasks::{TaskInstance, SEP, VALUE_BASE};

const PEAK: f64 = 50.0;

fn prompt_len(context: &[Token]) -> Option<usize> {
    context.iter().position(|&t| t == SEP).map(|i| i + 1)
}

fn one_hot(vocab: usize, t: Token) -> Vec<f64> {
    let mut v = vec![0.0; vocab];
    v[t] = PEAK;
    v
}

/// Emits the gold completion of whatever task the prompt encodes.
#[derive(Debug, Clone, Copy)]
pub struct LookupPolicy {
    pub vocab_size: usize,
}

impl Policy for LookupPolicy {
    fn next_logits(&self, context: &[Token]) -> Result<Vec<f64>> {
        let Some(pl) = prompt_len(context) else {
            return Ok(one_hot(self.vocab_size, EOS));
        };
        let task = match TaskInstance::from_prompt(&context[..pl]) {
            Ok(t) => t,
            Err(_) => return Ok(one_hot(self.vocab_size, EOS)),
        };
        let gold = task.gold();
        let pos = context.len() - pl;
        Ok(one_hot(
            self.vocab_size,
            gold.get(pos).copied().unwrap_or(EOS),
        ))
    }

    fn max_context(&self) -> usize {
        usize::MAX
    }
}

/// Always answers with a list one element too short, so it never passes.
#[derive(Debug, Clone, Copy)]
pub struct WrongPolicy {
    pub vocab_size: usize,
}

impl Policy for WrongPolicy {
    fn next_logits(&self, context: &[Token]) -> Result<Vec<f64>> {
        let pl = prompt_len(context).unwrap_or(context.len());
        let emitted = context.len() - pl;
        Ok(one_hot(
            self.vocab_size,
            if emitted == 0 { VALUE_BASE } else { EOS },
        ))
    }

    fn max_context(&self) -> usize {
        usize::MAX
    }
}
