//! Parameter-matched configuration search.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::ModelConfig;
use crate::tuning::LoraTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetMatch<C> {
    pub config: C,
    pub params: usize,
    pub target: usize,
}

impl<C> BudgetMatch<C> {
    /// `|params − target| / target`.
    pub fn relative_gap(&self) -> f64 {
        (self.params as f64 - self.target as f64).abs() / self.target.max(1) as f64
    }
}

/// The candidate whose parameter count is closest to `target`. Ties go to the
/// earlier candidate, so list candidates from smallest to largest.
pub fn match_parameter_budget<C: Clone>(
    target: usize,
    space: &[C],
    count: impl Fn(&C) -> usize,
) -> Result<BudgetMatch<C>> {
    let mut best: Option<(usize, usize)> = None;
    for (i, c) in space.iter().enumerate() {
        let gap = count(c).abs_diff(target);
        if best.is_none_or(|(_, g)| gap < g) {
            best = Some((i, gap));
        }
    }
    let (i, _) = best.ok_or_else(|| crate::Error::Contract("empty configuration space".into()))?;
    Ok(BudgetMatch {
        config: space[i].clone(),
        params: count(&space[i]),
        target,
    })
}

/// LoRA parameters: `2·d·r` per target projection per attention layer.
pub fn lora_param_count(config: &ModelConfig, rank: usize, n_targets: usize) -> usize {
    2 * config.d_model * rank * n_targets * config.attention_layers().len()
}

/// Prefix parameters: keys and values of `n_virtual × d` per attention layer.
pub fn prefix_param_count(config: &ModelConfig, n_virtual: usize) -> usize {
    2 * n_virtual * config.d_model * config.attention_layers().len()
}

/// Prefix length in `1..=max_virtual` closest to `target` parameters.
pub fn match_prefix_length(
    config: &ModelConfig,
    target: usize,
    max_virtual: usize,
) -> Result<BudgetMatch<usize>> {
    if config.attention_layers().is_empty() {
        return contract("prefix tuning needs attention layers");
    }
    let lengths: Vec<usize> = (1..=max_virtual).collect();
    match_parameter_budget(target, &lengths, |&n| prefix_param_count(config, n))
}

/// LoRA rank in `1..=max_rank` closest to `target` parameters.
pub fn match_lora_rank(
    config: &ModelConfig,
    targets: &[LoraTarget],
    target: usize,
    max_rank: usize,
) -> Result<BudgetMatch<usize>> {
    if config.attention_layers().is_empty() || targets.is_empty() {
        return contract("LoRA needs attention layers and target projections");
    }
    let ranks: Vec<usize> = (1..=max_rank).collect();
    match_parameter_budget(target, &ranks, |&r| {
        lora_param_count(config, r, targets.len())
    })
}
