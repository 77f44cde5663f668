//! Adam with bias correction.

use crate::error::{shape_err, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamMoments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn zeros_like(param: &Tensor<T>) -> Self {
        Self {
            m: Tensor::zeros(param.shape()),
            v: Tensor::zeros(param.shape()),
        }
    }
}

/// One Adam update of `param` in place. `step` is 1-based.
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    moments: &mut AdamMoments<T>,
    step: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.shape() != grad.shape()
        || param.shape() != moments.m.shape()
        || param.shape() != moments.v.shape()
    {
        return shape_err(format!(
            "adam: param {:?} vs grad {:?}",
            param.shape(),
            grad.shape()
        ));
    }
    assert!(step >= 1, "adam step index is 1-based");
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::one() - b1.powi(step as i32);
    let bc2 = T::one() - b2.powi(step as i32);
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    let one = T::one();
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(moments.m.data_mut())
        .zip(moments.v.data_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam state for a list of parameter tensors updated together.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    moments: Vec<AdamMoments<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        Self {
            config,
            moments: params.iter().map(|p| AdamMoments::zeros_like(p)).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != params.len() {
            return shape_err("adam: parameter list changed between steps");
        }
        self.step += 1;
        for ((p, g), m) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            adam_step(p, g, m, self.step, &self.config)?;
        }
        Ok(())
    }
}
