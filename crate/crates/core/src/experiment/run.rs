use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::analysis::probe::best_by_source;
use crate::analysis::{
    divergence_records, extract_features, persistence_kl, probe_layers, summarize_flips,
    DivergenceStudy, LayerAuc, PersistenceCurve,
};
use crate::error::{contract, Error, Result};
use crate::evalkit::{
    aggregate, baseline_report, evaluate, welch_t, EvalMode, EvalReport, Evaluation, SeedResult,
};
use crate::experiment::config::ExperimentConfig;
use crate::model::{pretrain_backbone, Adapted, HybridModel, ModelConfig, PretrainReport};
use crate::persist::config_hash;
use crate::tasks::{
    collect_verified, generate_split, mixture_corpus, Family, TaskInstance, VerifiedDataset,
};
use crate::tuning::{
    match_lora_rank, match_prefix_length, recurrent_state_numel, train_method, AdaptationBundle,
    Method, StateBank, TrainExample, TrainReport, TuningConfig,
};

/// Experiments run in single precision.
pub type Model = HybridModel<f32>;
pub type Bundle = AdaptationBundle<f32>;

/// One trained adaptation on one seed.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub seed: u64,
    pub bundle: Bundle,
    pub train: TrainReport,
    pub eval: Evaluation,
    pub result: SeedResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
}

/// Multi-seed comparison of methods against the untuned model.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub family: Family,
    pub baseline: Evaluation,
    pub baseline_report: EvalReport,
    /// One per method, each tested against the baseline.
    pub reports: Vec<EvalReport>,
    /// The first method against every other method.
    pub pairwise: Vec<PairwiseTest>,
    pub runs: Vec<MethodRun>,
    /// Verified examples collected per seed.
    pub dataset_sizes: Vec<(u64, usize)>,
    pub checksum_before: String,
    /// Backbone checksum after every run, in run order.
    pub checksums_after: Vec<String>,
}

impl Comparison {
    pub fn backbone_untouched(&self) -> bool {
        self.checksums_after
            .iter()
            .all(|c| *c == self.checksum_before)
    }

    pub fn report(&self, method: Method) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == method.name())
    }

    pub fn runs_of(&self, method: Method) -> impl Iterator<Item = &MethodRun> {
        self.runs.iter().filter(move |r| r.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: Family,
    pub baseline_accuracy: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub n_layers: usize,
    pub backbone_params: usize,
    pub s0_params: usize,
    pub baseline_accuracy: f64,
    pub mean_delta: f64,
    pub std: Option<f64>,
    pub p_value: Option<f64>,
}

/// The configured pipeline: split, corpus, pretraining, collection, tuning, evaluation.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config_hash(&self) -> Result<String> {
        config_hash(&self.config)
    }

    pub fn split(&self) -> Result<(Vec<TaskInstance>, Vec<TaskInstance>)> {
        let t = &self.config.tasks;
        generate_split(t.split_seed, t.n_train, t.n_test, &Family::ALL)
    }

    pub fn train_tasks(&self, family: Family) -> Result<Vec<TaskInstance>> {
        Ok(self
            .split()?
            .0
            .into_iter()
            .filter(|t| t.family == family)
            .collect())
    }

    pub fn test_tasks(&self, family: Family) -> Result<Vec<TaskInstance>> {
        Ok(self
            .split()?
            .1
            .into_iter()
            .filter(|t| t.family == family)
            .collect())
    }

    /// Pretraining corpus, disjoint from every train and test task.
    pub fn corpus(&self) -> Result<Vec<TrainExample>> {
        let (train, test) = self.split()?;
        let exclude: HashSet<u64> = train.iter().chain(&test).map(|t| t.id).collect();
        let t = &self.config.tasks;
        let weights: Vec<(Family, f64)> = t.mixture.iter().map(|(&f, &w)| (f, w)).collect();
        mixture_corpus(t.corpus_seed, t.corpus_size, &weights, &exclude)
    }

    pub fn pretrain(&self) -> Result<(Model, PretrainReport)> {
        self.pretrain_config(&self.config.model)
    }

    /// Pretrains a backbone of another shape on the same corpus.
    pub fn pretrain_config(&self, model: &ModelConfig) -> Result<(Model, PretrainReport)> {
        let mut m = Model::init(model.clone(), self.config.seed)?;
        let pc = crate::model::PretrainConfig {
            seed: self.config.seed,
            ..self.config.pretrain.clone()
        };
        let report = pretrain_backbone(&mut m, &self.corpus()?, &pc)?;
        Ok((m, report))
    }

    /// Same layer pattern rule, width, and heads at another depth.
    pub fn model_at_depth(&self, n_layers: usize) -> ModelConfig {
        let base = &self.config.model;
        ModelConfig {
            topology: base.topology,
            vocab_size: base.vocab_size,
            mlp_hidden: base.mlp_hidden,
            max_seq_len: base.max_seq_len,
            decay_bias_init: base.decay_bias_init,
            state_dim: base.state_dim,
            ..ModelConfig::interleaved(n_layers, base.d_model, base.heads, base.key_dim)
        }
    }

    /// Verified completions for the target family's training tasks.
    pub fn collect(&self, model: &Model, seed: u64) -> Result<VerifiedDataset> {
        let t = &self.config.tasks;
        let tasks = self.train_tasks(t.target)?;
        let none = Bundle::none();
        collect_verified(
            &Adapted {
                model,
                bundle: &none,
            },
            &tasks,
            t.collect_temperature,
            seed,
            t.max_attempts,
        )
    }

    /// Trainable S0 parameters of `model` under the configured layer mask.
    pub fn s0_budget(&self, model: &ModelConfig) -> Result<usize> {
        let layers = self
            .config
            .tuning
            .layers
            .clone()
            .unwrap_or_else(|| model.recurrent_layers());
        layers
            .iter()
            .map(|&l| recurrent_state_numel(model, l))
            .sum()
    }

    /// Tuning config for `method` on `seed`. LoRA rank and prefix length
    /// are matched to `budget` parameters when it is positive.
    pub fn method_config(
        &self,
        model: &ModelConfig,
        method: Method,
        seed: u64,
        budget: usize,
    ) -> Result<TuningConfig> {
        let mut c = TuningConfig {
            method,
            seed,
            ..self.config.tuning.clone()
        };
        if budget > 0 {
            match method {
                Method::Lora => {
                    c.lora_rank = match_lora_rank(
                        model,
                        &c.lora_targets,
                        budget,
                        self.config.eval.lora_max_rank,
                    )?
                    .config;
                }
                Method::Prefix => {
                    c.n_virtual =
                        match_prefix_length(model, budget, self.config.eval.prefix_max_virtual)?
                            .config;
                }
                Method::S0 | Method::Offset => {}
            }
        }
        Ok(c)
    }

    pub fn baseline(&self, model: &Model, tasks: &[TaskInstance]) -> Result<Evaluation> {
        evaluate(
            &Adapted {
                model,
                bundle: &Bundle::none(),
            },
            tasks,
            EvalMode::Greedy,
        )
    }

    /// Every method on every configured seed, trained on the target family
    /// and scored on its test tasks.
    pub fn compare(&self, model: &Model, methods: &[Method]) -> Result<Comparison> {
        self.compare_with_budget(model, methods, self.s0_budget(model.config())?)
    }

    pub fn compare_with_budget(
        &self,
        model: &Model,
        methods: &[Method],
        budget: usize,
    ) -> Result<Comparison> {
        if methods.is_empty() {
            return contract("no methods to compare");
        }
        let family = self.config.tasks.target;
        let test = self.test_tasks(family)?;
        let baseline = self.baseline(model, &test)?;
        let checksum_before = model.checksum();
        let mut runs = Vec::new();
        let mut dataset_sizes = Vec::new();
        let mut checksums_after = Vec::new();
        for &seed in &self.config.eval.seeds {
            let data = self.collect(model, seed)?;
            dataset_sizes.push((seed, data.len()));
            let examples = data.examples();
            for &method in methods {
                let cfg = self.method_config(model.config(), method, seed, budget)?;
                let (bundle, train) = train_method(model, &examples, &cfg)?;
                let eval = evaluate(
                    &Adapted {
                        model,
                        bundle: &bundle,
                    },
                    &test,
                    EvalMode::Greedy,
                )?;
                let result = SeedResult::compare(seed, &baseline, &eval)?;
                checksums_after.push(model.checksum());
                runs.push(MethodRun {
                    method,
                    seed,
                    bundle,
                    train,
                    eval,
                    result,
                });
            }
        }
        let baseline_rows: Vec<SeedResult> = runs
            .iter()
            .filter(|r| r.method == methods[0])
            .map(|r| r.result.clone())
            .collect();
        let base_report = baseline_report(&baseline_rows)?;
        let mut reports = Vec::with_capacity(methods.len());
        for &method in methods {
            let rows: Vec<SeedResult> = runs
                .iter()
                .filter(|r| r.method == method)
                .map(|r| r.result.clone())
                .collect();
            let params = runs
                .iter()
                .find(|r| r.method == method)
                .map_or(0, |r| r.train.trainable_params);
            reports.push(aggregate(method.name(), params, &rows, Some(&base_report))?);
        }
        let pairwise = reports[1..]
            .iter()
            .map(|b| pairwise(&reports[0], b))
            .collect();
        Ok(Comparison {
            family,
            baseline,
            baseline_report: base_report,
            reports,
            pairwise,
            runs,
            dataset_sizes,
            checksum_before,
            checksums_after,
        })
    }

    /// Banks of `method` from a comparison, evaluated on every family.
    pub fn cross_family(
        &self,
        model: &Model,
        comparison: &Comparison,
        method: Method,
    ) -> Result<Vec<FamilyReport>> {
        let (_, test) = self.split()?;
        let mut out = Vec::new();
        for family in Family::ALL {
            let tasks: Vec<TaskInstance> = test
                .iter()
                .filter(|t| t.family == family)
                .cloned()
                .collect();
            let baseline = self.baseline(model, &tasks)?;
            let rows = comparison
                .runs_of(method)
                .map(|run| {
                    let eval = evaluate(
                        &Adapted {
                            model,
                            bundle: &run.bundle,
                        },
                        &tasks,
                        EvalMode::Greedy,
                    )?;
                    SeedResult::compare(run.seed, &baseline, &eval)
                })
                .collect::<Result<Vec<_>>>()?;
            let params = comparison
                .runs_of(method)
                .next()
                .map_or(0, |r| r.train.trainable_params);
            let report = aggregate(method.name(), params, &rows, Some(&baseline_report(&rows)?))?;
            out.push(FamilyReport {
                family,
                baseline_accuracy: baseline.accuracy,
                report,
            });
        }
        Ok(out)
    }

    /// Pure-attention backbone of the same size with prefix tuning, budget
    /// matched to the hybrid model's S0 bank.
    pub fn prefix_control(&self) -> Result<(Model, Comparison)> {
        let attn = self.config.model.pure_attention();
        let (model, _) = self.pretrain_config(&attn)?;
        let budget = self.s0_budget(&self.config.model)?;
        let cmp = self.compare_with_budget(&model, &[Method::Prefix], budget)?;
        Ok((model, cmp))
    }

    /// S0 gains at several depths, each pretrained from scratch.
    pub fn scale_sweep(&self) -> Result<Vec<ScaleRow>> {
        let mut rows = Vec::new();
        for &n in &self.config.sweep.scale_layers {
            let mc = self.model_at_depth(n);
            let (model, _) = self.pretrain_config(&mc)?;
            let exp = Experiment {
                config: ExperimentConfig {
                    model: mc.clone(),
                    eval: crate::experiment::config::EvalSetup {
                        seeds: self.config.sweep.scale_seeds.clone(),
                        ..self.config.eval.clone()
                    },
                    tuning: TuningConfig {
                        layers: None,
                        ..self.config.tuning.clone()
                    },
                    ..self.config.clone()
                },
            };
            let cmp = exp.compare(&model, &[Method::S0])?;
            let r = &cmp.reports[0];
            rows.push(ScaleRow {
                n_layers: n,
                backbone_params: model.param_count(),
                s0_params: r.trainable_params,
                baseline_accuracy: cmp.baseline.accuracy,
                mean_delta: r.mean,
                std: r.std,
                p_value: r.p_value,
            });
        }
        Ok(rows)
    }

    /// Flip analysis of one tuned run against the baseline.
    pub fn divergence(&self, comparison: &Comparison, run: &MethodRun) -> Result<DivergenceStudy> {
        summarize_flips(
            &divergence_records(&comparison.baseline, &run.eval)?,
            crate::analysis::divergence::DIVERGENCE_NULL_P,
        )
    }

    /// KL curve averaged over the target test prompts of maximal length,
    /// with the ratio taken on the averaged curve.
    pub fn mean_persistence(
        &self,
        model: &Model,
        bank: &StateBank<f32>,
    ) -> Result<PersistenceCurve> {
        let test = self.test_tasks(self.config.tasks.target)?;
        let longest = test
            .iter()
            .map(|t| t.prompt.len())
            .max()
            .ok_or_else(|| Error::Contract("no test tasks".into()))?;
        let prompts: Vec<&TaskInstance> =
            test.iter().filter(|t| t.prompt.len() == longest).collect();
        let mut kl = vec![0.0; longest];
        for t in &prompts {
            for (s, x) in kl
                .iter_mut()
                .zip(persistence_kl(model, bank, &t.prompt)?.kl)
            {
                *s += x;
            }
        }
        let n = prompts.len() as f64;
        Ok(PersistenceCurve::from_kl(
            kl.into_iter().map(|x| x / n).collect(),
        ))
    }
}

/// Per-layer probe AUCs for predicting baseline greedy success on the
/// target family's test tasks from final-prompt-token features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n_examples: usize,
    pub n_positive: usize,
    pub layers: Vec<LayerAuc>,
    pub best: Vec<LayerAuc>,
}

impl Experiment {
    pub fn probe(&self, model: &Model) -> Result<ProbeReport> {
        let test = self.test_tasks(self.config.tasks.target)?;
        let baseline = self.baseline(model, &test)?;
        let labels: Vec<bool> = baseline.records.iter().map(|r| r.passed()).collect();
        let prompts: Vec<Vec<usize>> = test.iter().map(|t| t.prompt.clone()).collect();
        let features = extract_features(model, &prompts)?;
        let p = &self.config.probe;
        let layers = probe_layers(&features, &labels, p.components, p.folds, p.seed)?;
        Ok(ProbeReport {
            n_examples: labels.len(),
            n_positive: labels.iter().filter(|&&b| b).count(),
            best: best_by_source(&layers),
            layers,
        })
    }
}

fn pairwise(a: &EvalReport, b: &EvalReport) -> PairwiseTest {
    let w = welch_t(&a.deltas(), &b.deltas()).ok();
    PairwiseTest {
        a: a.method.clone(),
        b: b.method.clone(),
        mean_a: a.mean,
        mean_b: b.mean,
        t: w.map(|w| w.t),
        df: w.map(|w| w.df),
        p: w.map(|w| w.p),
    }
}
