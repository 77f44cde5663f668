//! Alpha, layer-group, and training-set-size sweeps of S0 tuning.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::evalkit::stats::{mean, sample_std};
use crate::evalkit::{evaluate, EvalMode, Evaluation, SeedResult};
use crate::model::{Adapted, HybridModel};
use crate::numerics::Prng;
use crate::scalar::Scalar;
use crate::tasks::TaskInstance;
use crate::tuning::{
    recurrent_state_numel, train_s0, AdaptationBundle, StateBank, TrainExample, TuningConfig,
};

/// Greedy evaluation of the untuned model.
pub fn baseline_eval<T: Scalar>(
    model: &HybridModel<T>,
    tasks: &[TaskInstance],
) -> Result<Evaluation> {
    evaluate(
        &Adapted {
            model,
            bundle: &AdaptationBundle::none(),
        },
        tasks,
        EvalMode::Greedy,
    )
}

/// Trains one bank and scores it against `baseline`.
pub fn tune_and_compare<T: Scalar>(
    model: &HybridModel<T>,
    examples: &[TrainExample],
    tasks: &[TaskInstance],
    cfg: &TuningConfig,
    baseline: &Evaluation,
) -> Result<(StateBank<T>, SeedResult)> {
    let (bank, _) = train_s0(model, examples, cfg)?;
    let bundle = AdaptationBundle::with_state(bank.clone());
    let tuned = evaluate(
        &Adapted {
            model,
            bundle: &bundle,
        },
        tasks,
        EvalMode::Greedy,
    )?;
    Ok((bank, SeedResult::compare(cfg.seed, baseline, &tuned)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub baseline_accuracy: f64,
    pub tuned_accuracy: f64,
    pub delta: f64,
    pub degraded: usize,
}

/// One bank per alpha; rows sorted by alpha.
pub fn alpha_sweep<T: Scalar>(
    model: &HybridModel<T>,
    examples: &[TrainExample],
    tasks: &[TaskInstance],
    alphas: &[f64],
    cfg: &TuningConfig,
) -> Result<Vec<AlphaRow>> {
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return contract("alpha sweep needs a nonempty list of positive alphas");
    }
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let baseline = baseline_eval(model, tasks)?;
    sorted
        .into_iter()
        .map(|alpha| {
            let (_, r) = tune_and_compare(
                model,
                examples,
                tasks,
                &TuningConfig {
                    alpha,
                    ..cfg.clone()
                },
                &baseline,
            )?;
            Ok(AlphaRow {
                alpha,
                baseline_accuracy: r.baseline_accuracy,
                tuned_accuracy: r.tuned_accuracy,
                delta: r.delta,
                degraded: r.degraded,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    /// Layers joined with `+`, or `none`.
    pub group: String,
    pub params: usize,
    pub delta: f64,
    pub degraded: usize,
}

pub fn group_label(group: &[usize]) -> String {
    if group.is_empty() {
        "none".to_string()
    } else {
        group
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Trains with the layer mask set to each group in turn. An empty group
/// leaves the model untouched and scores Δ = 0.
pub fn layer_sweep<T: Scalar>(
    model: &HybridModel<T>,
    examples: &[TrainExample],
    tasks: &[TaskInstance],
    groups: &[Vec<usize>],
    cfg: &TuningConfig,
) -> Result<Vec<LayerRow>> {
    let recurrent = model.config().recurrent_layers();
    for g in groups {
        if let Some(l) = g.iter().find(|l| !recurrent.contains(l)) {
            return contract(format!("layer {l} in group {g:?} is not a recurrent layer"));
        }
    }
    let baseline = baseline_eval(model, tasks)?;
    groups
        .iter()
        .map(|group| {
            let params = group
                .iter()
                .map(|&l| recurrent_state_numel(model.config(), l))
                .sum::<Result<usize>>()?;
            if group.is_empty() {
                return Ok(LayerRow {
                    group: group_label(group),
                    params,
                    delta: 0.0,
                    degraded: 0,
                });
            }
            let c = TuningConfig {
                layers: Some(group.clone()),
                ..cfg.clone()
            };
            let (_, r) = tune_and_compare(model, examples, tasks, &c, &baseline)?;
            Ok(LayerRow {
                group: group_label(group),
                params,
                delta: r.delta,
                degraded: r.degraded,
            })
        })
        .collect()
}

/// The first `size` examples of a seeded shuffle. The stream is derived
/// from `(seed, size)`, so each cell is reproducible on its own.
pub fn subsample<E: Clone>(items: &[E], size: usize, seed: u64) -> Result<Vec<E>> {
    if size == 0 || size > items.len() {
        return contract(format!(
            "subsample size must be in 1..={}, got {size}",
            items.len()
        ));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    Prng::new(seed).derive(size as u64).shuffle(&mut idx);
    Ok(idx[..size].iter().map(|&i| items[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSizeRow {
    pub n_solutions: usize,
    pub mean_delta: f64,
    /// Sample std over seeds; empty with one seed.
    pub std: Option<f64>,
    pub seeds: usize,
}

/// For every size, trains on a per-seed subsample and averages Δ over seeds.
/// The tuning seed follows the subsample seed.
pub fn datasize_sweep<T: Scalar>(
    model: &HybridModel<T>,
    examples: &[TrainExample],
    tasks: &[TaskInstance],
    sizes: &[usize],
    seeds: &[u64],
    cfg: &TuningConfig,
) -> Result<Vec<DataSizeRow>> {
    if seeds.is_empty() {
        return contract("datasize sweep needs at least one seed");
    }
    let baseline = baseline_eval(model, tasks)?;
    sizes
        .iter()
        .map(|&size| {
            let deltas = seeds
                .iter()
                .map(|&seed| {
                    let sub = subsample(examples, size, seed)?;
                    let c = TuningConfig {
                        seed,
                        ..cfg.clone()
                    };
                    Ok(tune_and_compare(model, &sub, tasks, &c, &baseline)?.1.delta)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(DataSizeRow {
                n_solutions: size,
                mean_delta: mean(&deltas),
                std: (deltas.len() > 1).then(|| sample_std(&deltas)),
                seeds: deltas.len(),
            })
        })
        .collect()
}
