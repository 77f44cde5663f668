//! Backbone training on a mixed synthetic corpus, after which the model is frozen.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::model::forward::{bind_weights, BoundAdapters};
use crate::model::weights::HybridModel;
use crate::numerics::{Adam, AdamConfig, Graph, Prng, Tensor};
use crate::scalar::Scalar;
use crate::tuning::loss::{example_ce, TrainExample};
use crate::tuning::{completion_loss, AdaptationBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Examples from the head of the corpus used for the before/after loss.
    pub eval_examples: usize,
    /// Linear warmup length; the rate then follows a cosine down to `lr · final_lr_fraction`.
    pub warmup_steps: usize,
    pub final_lr_fraction: f64,
}

impl PretrainConfig {
    /// Learning rate applied at optimizer step `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let floor = self.lr * self.final_lr_fraction;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1200,
            lr: 3e-3,
            batch_size: 8,
            seed: 0,
            clip_norm: 1.0,
            eval_examples: 64,
            warmup_steps: 0,
            final_lr_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean training loss per step.
    pub losses: Vec<f64>,
}

/// Trains every backbone weight with Adam on completion cross-entropy, then freezes.
pub fn pretrain_backbone<T: Scalar>(
    model: &mut HybridModel<T>,
    corpus: &[TrainExample],
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if corpus.is_empty() {
        return contract("pretraining corpus is empty");
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return contract("pretraining needs batch_size ≥ 1 and lr > 0");
    }
    let eval = &corpus[..cfg.eval_examples.clamp(1, corpus.len())];
    let none = AdaptationBundle::none();
    let initial_loss = completion_loss(model, &none, eval, 0.0)?.to_f64_lossless();

    let mut adam = {
        let refs: Vec<&Tensor<T>> = model.params().iter().map(|p| p.as_ref()).collect();
        Adam::new(AdamConfig::with_lr(cfg.lr), &refs)
    };
    let mut rng = Prng::new(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<&TrainExample> = (0..cfg.batch_size)
            .map(|_| &corpus[rng.below(corpus.len() as u64) as usize])
            .collect();
        let mut g = Graph::new();
        let w = bind_weights(&mut g, model, true);
        let ad = BoundAdapters::empty(model.config().n_layers);
        let mut total = None;
        for ex in batch {
            let ce = example_ce(&mut g, model, &w, ex, &ad)?;
            total = Some(match total {
                None => ce,
                Some(t) => g.add(t, ce)?,
            });
        }
        let loss = g.scale(
            total.expect("batch nonempty"),
            T::of(1.0 / cfg.batch_size as f64),
        );
        let value = g.value(loss).item().to_f64_lossless();
        if !value.is_finite() {
            return Err(Error::Training(format!(
                "pretraining diverged at step {step}: loss {value}; trace tail {:?}",
                &losses[losses.len().saturating_sub(5)..]
            )));
        }
        losses.push(value);
        let grads = g.backward(loss)?;
        let mut gs: Vec<Tensor<T>> = w.iter().map(|&v| grads.wrt(v).clone()).collect();
        if cfg.clip_norm > 0.0 {
            let norm = gs
                .iter()
                .map(|t| t.sum_squares().to_f64_lossless())
                .sum::<f64>()
                .sqrt();
            if norm > cfg.clip_norm {
                let s = T::of(cfg.clip_norm / norm);
                gs = gs.iter().map(|t| t.scale(s)).collect();
            }
        }
        let grefs: Vec<&Tensor<T>> = gs.iter().collect();
        adam.config.lr = cfg.lr_at(step);
        let mut params = model.params_mut()?;
        adam.step(&mut params, &grefs)?;
    }
    let final_loss = completion_loss(model, &none, eval, 0.0)?.to_f64_lossless();
    model.freeze();
    Ok(PretrainReport {
        initial_loss,
        final_loss,
        losses,
    })
}
