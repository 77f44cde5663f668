//! How long an injected initial state keeps influencing the next-token distribution.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::{HybridModel, Token};
use crate::numerics::graph::softmax_in_place;
use crate::numerics::Tensor;
use crate::recurrence::{gdn_head_step, GdnHeadGates};
use crate::scalar::Scalar;
use crate::tuning::{AdaptationBundle, StateBank};

/// Smoothing added to both distributions before taking logs.
pub const KL_EPSILON: f64 = 1e-12;

/// `KL(p ‖ q) = Σ p_i ln((p_i + ε) / (q_i + ε))` for two probability vectors.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * ((a + KL_EPSILON) / (b + KL_EPSILON)).ln())
        .sum::<f64>()
        .max(0.0)
}

fn probs(row: &[f64]) -> Vec<f64> {
    let mut r = row.to_vec();
    softmax_in_place(&mut r);
    r
}

/// KL of next-token distributions per prompt position, and its ratio to position 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceCurve {
    pub kl: Vec<f64>,
    /// `kl[t] / kl[0]`; identically zero when `kl[0] == 0`.
    pub ratio: Vec<f64>,
}

impl PersistenceCurve {
    pub fn from_kl(kl: Vec<f64>) -> Self {
        let first = kl[0];
        let ratio = if first > 0.0 {
            kl.iter().map(|k| k / first).collect()
        } else {
            vec![0.0; kl.len()]
        };
        Self { kl, ratio }
    }

    /// Builds the curve from two `positions × vocab` logit matrices.
    pub fn from_logits<T: Scalar>(tuned: &Tensor<T>, baseline: &Tensor<T>) -> Result<Self> {
        if tuned.shape() != baseline.shape() || tuned.shape().len() != 2 || tuned.shape()[0] == 0 {
            return contract("persistence curve needs two equal-shape logit matrices");
        }
        let v = tuned.shape()[1];
        let to64 = |t: &Tensor<T>| {
            t.data()
                .iter()
                .map(|x| x.to_f64_lossless())
                .collect::<Vec<_>>()
        };
        let (a, b) = (to64(tuned), to64(baseline));
        let kl = a
            .chunks(v)
            .zip(b.chunks(v))
            .map(|(x, y)| kl_divergence(&probs(x), &probs(y)))
            .collect();
        Ok(Self::from_kl(kl))
    }

    pub fn positions(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.kl
            .iter()
            .zip(&self.ratio)
            .enumerate()
            .map(|(i, (&k, &r))| (i + 1, k, r))
    }
}

/// Tuned (bank) vs zero-state forward over the same prompt.
pub fn persistence_kl<T: Scalar>(
    model: &HybridModel<T>,
    bank: &StateBank<T>,
    prompt: &[Token],
) -> Result<PersistenceCurve> {
    if prompt.len() < 2 {
        return contract("persistence needs a prompt of at least 2 tokens");
    }
    let tuned = model.logits(prompt, &AdaptationBundle::with_state(bank.clone()))?;
    let base = model.logits(prompt, &AdaptationBundle::none())?;
    PersistenceCurve::from_logits(&tuned, &base)
}

/// Single GDN head with β = 0 and a constant decay, read out linearly into logits.
///
/// With the write gate closed, the state after step `t` is `αᵗ S0` and the
/// logit shift is `αᵗ W S0 q`. For a small shift KL is quadratic in it, so
/// the ratio to position 1 follows `α^(2(t−1))`.
#[derive(Debug, Clone)]
pub struct LinearReadoutToy {
    pub alpha: f64,
    /// `value_dim × key_dim`.
    pub s0: Tensor<f64>,
    pub key: Tensor<f64>,
    pub query: Tensor<f64>,
    /// `vocab × value_dim`.
    pub readout: Tensor<f64>,
    pub bias: Vec<f64>,
}

impl LinearReadoutToy {
    pub fn curve(&self, steps: usize) -> Result<PersistenceCurve> {
        if steps < 1 {
            return contract("toy needs at least one step");
        }
        let gates = GdnHeadGates {
            alpha: self.alpha,
            beta: 0.0,
            key: self.key.clone(),
            value: Tensor::zeros(&[self.s0.shape()[0]]),
            query: self.query.clone(),
        };
        let base = probs(&self.bias);
        let mut s = self.s0.clone();
        let mut kl = Vec::with_capacity(steps);
        for _ in 0..steps {
            s = gdn_head_step(&s, &gates)?;
            let shift = self.readout.matvec(&s.matvec(&self.query)?)?;
            let logits: Vec<f64> = self
                .bias
                .iter()
                .zip(shift.data())
                .map(|(b, d)| b + d)
                .collect();
            kl.push(kl_divergence(&probs(&logits), &base));
        }
        Ok(PersistenceCurve::from_kl(kl))
    }

    /// `α^(2(t−1))` for `t = 1..=steps`.
    pub fn closed_form(&self, steps: usize) -> Vec<f64> {
        (0..steps).map(|t| self.alpha.powi(2 * t as i32)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_basics() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&p, &p), 0.0);
        let q = [0.5, 0.25, 0.25];
        let want: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        assert!((kl_divergence(&p, &q) - want).abs() < 1e-10);
    }

    #[test]
    fn zero_first_position_guards_to_zero() {
        let c = PersistenceCurve::from_kl(vec![0.0, 0.0, 0.0]);
        assert_eq!(c.ratio, vec![0.0; 3]);
    }
}
