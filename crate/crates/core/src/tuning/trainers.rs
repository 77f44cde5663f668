//! Adam training of S0 banks, state offsets, LoRA factors and prefixes.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::model::HybridModel;
use crate::numerics::{Adam, AdamConfig, Prng, Tensor};
use crate::scalar::Scalar;
use crate::tuning::bank::{
    AdaptationBundle, LoraAdapters, LoraTarget, Method, OffsetBank, PrefixParams, StateBank,
};
use crate::tuning::loss::{completion_loss, loss_and_grad, TrainExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    pub method: Method,
    pub lr: f64,
    /// Optimizer updates.
    pub steps: usize,
    pub l2_lambda: f64,
    pub batch_size: usize,
    /// Controls example order and any random initialization.
    pub seed: u64,
    /// State scaling for S0 banks.
    pub alpha: f64,
    /// Recurrent layers to tune for S0/offset; `None` means all.
    pub layers: Option<Vec<usize>>,
    pub lora_rank: usize,
    pub lora_targets: Vec<LoraTarget>,
    pub n_virtual: usize,
}

impl Default for TuningConfig {
    /// lr 1e-3, 20 steps, λ 5e-4, batch 1, alpha 0.07.
    fn default() -> Self {
        Self {
            method: Method::S0,
            lr: 1e-3,
            steps: 20,
            l2_lambda: 5e-4,
            batch_size: 1,
            seed: 0,
            alpha: 0.07,
            layers: None,
            lora_rank: 24,
            lora_targets: LoraTarget::ALL.to_vec(),
            n_virtual: 30,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::Config("l2_lambda must be nonnegative".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    /// Batch loss before the update.
    pub loss: f64,
    pub grad_norm: f64,
    /// Norm of the trainable tensors after the update.
    pub param_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    pub trainable_params: usize,
    /// Loss over the full training set before the first and after the last update.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub trace: Vec<TraceRow>,
}

impl TrainReport {
    /// `step,loss,grad_norm,param_norm` rows.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("step,loss,grad_norm,param_norm\n");
        for r in &self.trace {
            s.push_str(&format!(
                "{},{:.10e},{:.10e},{:.10e}\n",
                r.step, r.loss, r.grad_norm, r.param_norm
            ));
        }
        s
    }
}

/// Example order: a fresh shuffle each epoch.
struct Batches {
    rng: Prng,
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    fn new(n: usize, rng: Prng) -> Self {
        Self {
            rng,
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.rng.shuffle(&mut self.order);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn norm<T: Scalar>(ts: &[&Tensor<T>]) -> f64 {
    ts.iter()
        .map(|t| t.sum_squares().to_f64_lossless())
        .sum::<f64>()
        .sqrt()
}

/// Optimizes every tensor of `bundle` with Adam; the backbone stays frozen.
pub fn train_bundle<T: Scalar>(
    model: &HybridModel<T>,
    examples: &[TrainExample],
    cfg: &TuningConfig,
    mut bundle: AdaptationBundle<T>,
) -> Result<(AdaptationBundle<T>, TrainReport)> {
    cfg.validate()?;
    if !model.is_frozen() {
        return contract("tuning requires a frozen backbone");
    }
    if examples.is_empty() {
        return contract("no training examples");
    }
    let method = bundle
        .active()
        .ok_or_else(|| Error::Contract("no adaptation to train".into()))?;
    let initial_loss = completion_loss(model, &bundle, examples, cfg.l2_lambda)?.to_f64_lossless();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &bundle.tensors());
    let mut batches = Batches::new(examples.len(), Prng::new(cfg.seed).derive(0));
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<TrainExample> = batches
            .next(cfg.batch_size)
            .into_iter()
            .map(|i| examples[i].clone())
            .collect();
        let (loss, grads) = match loss_and_grad(model, &bundle, &batch, cfg.l2_lambda) {
            Ok(x) => x,
            Err(Error::Training(msg)) => {
                return Err(Error::Training(format!(
                    "{} training aborted at step {step}: {msg}; loss trace {:?}",
                    method.name(),
                    trace.iter().map(|r: &TraceRow| r.loss).collect::<Vec<_>>()
                )))
            }
            Err(e) => return Err(e),
        };
        let grefs: Vec<&Tensor<T>> = grads.iter().collect();
        let grad_norm = norm(&grefs);
        adam.step(&mut bundle.tensors_mut(), &grefs)?;
        trace.push(TraceRow {
            step,
            loss: loss.to_f64_lossless(),
            grad_norm,
            param_norm: norm(&bundle.tensors()),
        });
    }
    let final_loss = completion_loss(model, &bundle, examples, cfg.l2_lambda)?.to_f64_lossless();
    let trainable_params = bundle.param_count();
    Ok((
        bundle,
        TrainReport {
            method,
            trainable_params,
            initial_loss,
            final_loss,
            trace,
        },
    ))
}

fn tuned_layers(model_layers: Vec<usize>, cfg: &TuningConfig) -> Vec<usize> {
    cfg.layers.clone().unwrap_or(model_layers)
}

/// S0 tuning: zero-initialized initial states, scaled by `cfg.alpha` in the forward.
pub fn train_s0<T: Scalar>(
    model: &HybridModel<T>,
    examples: &[TrainExample],
    cfg: &TuningConfig,
) -> Result<(StateBank<T>, TrainReport)> {
    let layers = tuned_layers(model.config().recurrent_layers(), cfg);
    let bank = StateBank::zeros(model.config(), &layers, cfg.alpha)?;
    let (b, report) = train_bundle(model, examples, cfg, AdaptationBundle::with_state(bank))?;
    Ok((b.state.expect("state bundle"), report))
}

/// Per-step additive state offsets, zero-initialized.
pub fn train_offset<T: Scalar>(
    model: &HybridModel<T>,
    examples: &[TrainExample],
    cfg: &TuningConfig,
) -> Result<(OffsetBank<T>, TrainReport)> {
    let layers = tuned_layers(model.config().recurrent_layers(), cfg);
    let bank = OffsetBank::zeros(model.config(), &layers)?;
    let (b, report) = train_bundle(model, examples, cfg, AdaptationBundle::with_offset(bank))?;
    Ok((b.offset.expect("offset bundle"), report))
}

/// LoRA on every attention layer; A Gaussian, B zero.
pub fn train_lora<T: Scalar>(
    model: &HybridModel<T>,
    examples: &[TrainExample],
    cfg: &TuningConfig,
    rank: usize,
    targets: &[LoraTarget],
) -> Result<(LoraAdapters<T>, TrainReport)> {
    if targets.is_empty() {
        return contract("LoRA needs at least one target projection");
    }
    let adapters = LoraAdapters::init(
        model.config(),
        rank,
        targets,
        &mut Prng::new(cfg.seed).derive(1),
    )?;
    if adapters.pairs.is_empty() {
        return contract("LoRA needs at least one attention layer");
    }
    let (b, report) = train_bundle(model, examples, cfg, AdaptationBundle::with_lora(adapters))?;
    Ok((b.lora.expect("lora bundle"), report))
}

/// Prefix key/values on every attention layer; keys Gaussian, values zero.
pub fn train_prefix<T: Scalar>(
    model: &HybridModel<T>,
    examples: &[TrainExample],
    cfg: &TuningConfig,
    n_virtual: usize,
) -> Result<(PrefixParams<T>, TrainReport)> {
    let prefix = PrefixParams::init(
        model.config(),
        n_virtual,
        &mut Prng::new(cfg.seed).derive(2),
    )?;
    let (b, report) = train_bundle(model, examples, cfg, AdaptationBundle::with_prefix(prefix))?;
    Ok((b.prefix.expect("prefix bundle"), report))
}

/// Trains whichever method `cfg.method` names.
pub fn train_method<T: Scalar>(
    model: &HybridModel<T>,
    examples: &[TrainExample],
    cfg: &TuningConfig,
) -> Result<(AdaptationBundle<T>, TrainReport)> {
    match cfg.method {
        Method::S0 => {
            train_s0(model, examples, cfg).map(|(b, r)| (AdaptationBundle::with_state(b), r))
        }
        Method::Offset => {
            train_offset(model, examples, cfg).map(|(b, r)| (AdaptationBundle::with_offset(b), r))
        }
        Method::Lora => train_lora(model, examples, cfg, cfg.lora_rank, &cfg.lora_targets)
            .map(|(b, r)| (AdaptationBundle::with_lora(b), r)),
        Method::Prefix => train_prefix(model, examples, cfg, cfg.n_virtual)
            .map(|(b, r)| (AdaptationBundle::with_prefix(b), r)),
    }
}
