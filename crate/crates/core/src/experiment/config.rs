//! The TOML experiment file. Keys given in the file are laid over the
//! desk-scale defaults below, table by table; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PretrainConfig};
use crate::tasks::Family;
use crate::tuning::{Method, TuningConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSetup {
    pub split_seed: u64,
    /// Train/test sizes over all families; each family gets an equal share.
    pub n_train: usize,
    pub n_test: usize,
    /// Family the adaptations are trained on.
    pub target: Family,
    /// Family reported as the transfer domain.
    pub transfer: Family,
    pub corpus_seed: u64,
    pub corpus_size: usize,
    /// Pretraining mixture weights.
    pub mixture: BTreeMap<Family, f64>,
    pub collect_temperature: f64,
    pub max_attempts: usize,
}

impl Default for TaskSetup {
    fn default() -> Self {
        Self {
            split_seed: 1,
            n_train: 2048,
            n_test: 800,
            target: Family::Sort,
            transfer: Family::Increment,
            corpus_seed: 3,
            corpus_size: 20_000,
            mixture: Family::ALL.iter().map(|&f| (f, 1.0)).collect(),
            collect_temperature: 1.0,
            max_attempts: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSetup {
    /// Tuning seeds; each seed recollects data and retrains.
    pub seeds: Vec<u64>,
    /// Methods compared against the untuned baseline.
    pub methods: Vec<Method>,
    /// Upper bound of the LoRA rank search when matching the S0 budget.
    pub lora_max_rank: usize,
    /// Upper bound of the prefix-length search when matching the S0 budget.
    pub prefix_max_virtual: usize,
    /// Samples per task for sampled evaluation and pass@k.
    pub samples: usize,
    pub temperature: f64,
    pub pass_k: Vec<usize>,
}

impl Default for EvalSetup {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            methods: vec![Method::S0, Method::Lora],
            lora_max_rank: 64,
            prefix_max_virtual: 64,
            samples: 10,
            temperature: 1.0,
            pass_k: vec![1, 5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSetup {
    pub alphas: Vec<f64>,
    /// Layer groups; `[]` is the untuned control.
    pub layer_groups: Vec<Vec<usize>>,
    pub sizes: Vec<usize>,
    pub size_seeds: Vec<u64>,
    /// Depths for the scale sweep; each depth is pretrained from scratch.
    pub scale_layers: Vec<usize>,
    pub scale_seeds: Vec<u64>,
}

impl Default for SweepSetup {
    fn default() -> Self {
        Self {
            alphas: vec![0.07, 0.3, 1.0, 3.0, 10.0, 100.0],
            layer_groups: vec![vec![], vec![0], vec![1], vec![2], vec![0, 1, 2]],
            sizes: vec![8, 16, 32, 64],
            size_seeds: vec![0, 1, 2],
            scale_layers: vec![4, 8, 12],
            scale_seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSetup {
    /// PCA width; `None` uses `min(16, features)`.
    pub components: Option<usize>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for ProbeSetup {
    fn default() -> Self {
        Self {
            components: None,
            folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Model initialization and pretraining order.
    pub seed: u64,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub tasks: TaskSetup,
    pub tuning: TuningConfig,
    pub eval: EvalSetup,
    pub sweep: SweepSetup,
    pub probe: ProbeSetup,
}

impl Default for ExperimentConfig {
    /// Four layers `GDN GDN GDN ATTN`, d_model 32, pretrained 8000 steps;
    /// S0 at alpha 1.0, lr 1e-2, 200 steps.
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::interleaved(4, 32, 2, 16),
            pretrain: PretrainConfig {
                steps: 8000,
                lr: 3e-3,
                ..PretrainConfig::default()
            },
            tasks: TaskSetup::default(),
            tuning: TuningConfig {
                lr: 1e-2,
                steps: 200,
                alpha: 1.0,
                lora_rank: 6,
                ..TuningConfig::default()
            },
            eval: EvalSetup::default(),
            sweep: SweepSetup::default(),
            probe: ProbeSetup::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let overrides: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let mut merged =
            toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        overlay(&mut merged, overrides);
        let c: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.tuning.validate()?;
        let t = &self.tasks;
        if t.n_train == 0 || t.n_test == 0 || t.corpus_size == 0 {
            return Err(Error::Config(
                "task and corpus sizes must be positive".into(),
            ));
        }
        if !(t.collect_temperature > 0.0) || t.max_attempts == 0 {
            return Err(Error::Config(
                "collection needs a positive temperature and attempt budget".into(),
            ));
        }
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        if self.eval.samples == 0
            || self
                .eval
                .pass_k
                .iter()
                .any(|&k| k == 0 || k > self.eval.samples)
        {
            return Err(Error::Config(
                "pass_k values must lie in 1..=samples".into(),
            ));
        }
        if self.probe.folds < 2 {
            return Err(Error::Config("probe.folds must be at least 2".into()));
        }
        Ok(())
    }
}

fn overlay(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => overlay(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = ExperimentConfig::from_toml("seed = 4\n[tuning]\nsteps = 7\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.tuning.steps, 7);
        assert_eq!(c.tuning.lr, ExperimentConfig::default().tuning.lr);
        assert_eq!(c.tasks, TaskSetup::default());
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(ExperimentConfig::from_toml("sede = 4\n").is_err());
        assert!(ExperimentConfig::from_toml("[tuning]\nlearning_rate = 1.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nvocab = 64\n").is_err());
    }
}
