use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use statetune::analysis::{
    alpha_sweep, datasize_sweep, divergence_records, layer_sweep, summarize_flips, DivergenceRecord,
};
use statetune::evalkit::{
    aggregate, baseline_report, evaluate, pass_at_k_tasks, render_seed_table, render_table,
    spearman, EvalMode, EvalReport, Evaluation, SeedResult,
};
use statetune::experiment::{Experiment, ExperimentConfig};
use statetune::model::Adapted;
use statetune::persist::{
    config_hash, csv_bytes, emit, json_bytes, load_adapter, load_bank, load_model, save_adapter,
    save_bank, Sidecar,
};
use statetune::tasks::{Family, TaskInstance, VerifiedDataset};
use statetune::tuning::{match_lora_rank, train_method, Method};
use statetune::{Bundle32, Error, Model32, Result};

use crate::{
    AdaptArg, AnalyzeArgs, AnalyzeKind, Cli, Command, Control, EvalArgs, MethodArg, ModeArg,
    ModelArg, PasskArgs, ReportArgs, SwapArgs, SweepArgs, SweepKind, TrainArgs,
};

struct Ctx {
    exp: Experiment,
    seed: u64,
    out: PathBuf,
    hash: String,
}

impl Ctx {
    fn cfg(&self) -> &ExperimentConfig {
        &self.exp.config
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn meta(&self) -> Sidecar {
        Sidecar::new(self.seed, self.hash.clone())
    }

    fn emit(&self, rel: &str, bytes: &[u8], meta: Sidecar) -> Result<PathBuf> {
        let p = self.path(rel);
        emit(&p, bytes, &meta)?;
        println!("wrote {}", p.display());
        Ok(p)
    }

    fn emit_json<S: Serialize + ?Sized>(
        &self,
        rel: &str,
        value: &S,
        meta: Sidecar,
    ) -> Result<PathBuf> {
        self.emit(rel, &json_bytes(value)?, meta)
    }

    fn emit_csv<R: Serialize>(&self, rel: &str, rows: &[R], meta: Sidecar) -> Result<PathBuf> {
        self.emit(rel, &csv_bytes(rows)?, meta)
    }

    fn model(&self, arg: &ModelArg) -> Result<Model32> {
        let p = arg.model.clone().unwrap_or_else(|| self.path("model.s0md"));
        load_model(&p)
    }

    fn data(&self, path: &Option<PathBuf>) -> Result<VerifiedDataset> {
        let p = path
            .clone()
            .unwrap_or_else(|| self.path(&format!("data/verified-seed{}.jsonl", self.seed)));
        VerifiedDataset::read_jsonl(std::io::BufReader::new(std::fs::File::open(&p)?))
    }

    fn family(&self, name: &Option<String>) -> Result<Family> {
        match name {
            Some(s) => s.parse(),
            None => Ok(self.cfg().tasks.target),
        }
    }

    fn tasks(&self, family: Family) -> Result<Vec<TaskInstance>> {
        self.exp.test_tasks(family)
    }
}

/// An adaptation loaded from disk plus a name derived from its file.
fn load_adaptation(arg: &AdaptArg) -> Result<(Bundle32, String)> {
    let stem = |p: &Path| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    match (&arg.bank, &arg.adapter) {
        (Some(b), _) => Ok((Bundle32::with_state(load_bank(b)?), stem(b))),
        (None, Some(a)) => Ok((load_adapter(a)?, stem(a))),
        (None, None) => Ok((Bundle32::none(), "baseline".into())),
    }
}

fn method_name(bundle: &Bundle32) -> &'static str {
    bundle.active().map_or("baseline", Method::name)
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = cli.seed.unwrap_or(config.seed);
    if matches!(cli.command, Command::Pretrain) {
        config.seed = seed;
    }
    let hash = config_hash(&config)?;
    let ctx = Ctx {
        exp: Experiment::new(config)?,
        seed,
        out: cli.out_dir.clone(),
        hash,
    };
    match &cli.command {
        Command::Pretrain => pretrain(&ctx),
        Command::Collect(a) => collect(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Swap(a) => swap(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Analyze(a) => analyze(&ctx, a),
        Command::Passk(a) => passk(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

fn pretrain(ctx: &Ctx) -> Result<()> {
    let (model, report) = ctx.exp.pretrain()?;
    let p = ctx.path("model.s0md");
    statetune::persist::save_model(&p, &model)?;
    ctx.meta()
        .note("checksum", model.checksum())
        .note("params", model.param_count())
        .write_for(&p)?;
    println!("wrote {}", p.display());
    ctx.emit_json("pretrain.json", &report, ctx.meta())?;
    println!(
        "loss {:.4} -> {:.4}",
        report.initial_loss, report.final_loss
    );
    Ok(())
}

fn collect(ctx: &Ctx, a: &ModelArg) -> Result<()> {
    let model = ctx.model(a)?;
    let data = ctx.exp.collect(&model, ctx.seed)?;
    let n_tasks = ctx.exp.train_tasks(ctx.cfg().tasks.target)?.len();
    ctx.emit(
        &format!("data/verified-seed{}.jsonl", ctx.seed),
        &data.to_jsonl_bytes(),
        ctx.meta()
            .note("tasks", n_tasks)
            .note("verified", data.len()),
    )?;
    println!("{} verified of {n_tasks} tasks", data.len());
    Ok(())
}

fn method_of(m: MethodArg) -> Method {
    match m {
        MethodArg::S0 => Method::S0,
        MethodArg::Offset => Method::Offset,
        MethodArg::Lora => Method::Lora,
        MethodArg::Prefix => Method::Prefix,
    }
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let model = ctx.model(&a.model)?;
    let data = ctx.data(&a.data)?;
    let method = method_of(a.method);
    let budget = if a.no_match {
        0
    } else {
        ctx.exp.s0_budget(model.config())?
    };
    let cfg = ctx
        .exp
        .method_config(model.config(), method, ctx.seed, budget)?;
    let before = model.checksum();
    let (bundle, report) = train_method(&model, &data.examples(), &cfg)?;
    if model.checksum() != before {
        return Err(Error::Training(
            "backbone weights changed during tuning".into(),
        ));
    }
    let name = format!("{}-seed{}", method.name(), ctx.seed);
    let meta = ctx
        .meta()
        .note("method", method.name())
        .note("trainable_params", report.trainable_params)
        .note("s0_budget", budget)
        .note("examples", data.len());
    let p = match method {
        Method::S0 => {
            let p = ctx.path(&format!("banks/{name}.s0bk"));
            save_bank(&p, bundle.state.as_ref().expect("S0 bundle"))?;
            p
        }
        _ => {
            let p = ctx.path(&format!("adapters/{name}.json"));
            save_adapter(&p, &bundle)?;
            p
        }
    };
    meta.clone().write_for(&p)?;
    println!("wrote {}", p.display());
    ctx.emit(
        &format!("train/{name}.csv"),
        report.trace_csv().as_bytes(),
        meta.clone(),
    )?;
    ctx.emit_json(&format!("train/{name}.json"), &report, meta)?;
    println!(
        "{} params {}, loss {:.4} -> {:.4}",
        method.name(),
        report.trainable_params,
        report.initial_loss,
        report.final_loss
    );
    Ok(())
}

/// One saved evaluation, the unit `report` aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalFile {
    label: String,
    method: String,
    seed: u64,
    family: Family,
    trainable_params: usize,
    accuracy: f64,
    baseline_accuracy: Option<f64>,
    result: Option<SeedResult>,
    evaluation: Evaluation,
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let model = ctx.model(&a.model)?;
    let (bundle, stem) = load_adaptation(&a.adapt)?;
    bundle.validate(model.config())?;
    let family = ctx.family(&a.family)?;
    let tasks = ctx.tasks(family)?;
    let e = &ctx.cfg().eval;
    let mode = match a.mode {
        ModeArg::Greedy => EvalMode::Greedy,
        ModeArg::Sampled => EvalMode::Sampled {
            n: e.samples,
            temperature: e.temperature,
            seed: ctx.seed,
        },
    };
    let evaluation = evaluate(
        &Adapted {
            model: &model,
            bundle: &bundle,
        },
        &tasks,
        mode,
    )?;
    let (baseline_accuracy, result) = match (a.mode, bundle.active()) {
        (ModeArg::Greedy, Some(_)) => {
            let base = ctx.exp.baseline(&model, &tasks)?;
            let r = SeedResult::compare(ctx.seed, &base, &evaluation)?;
            (Some(base.accuracy), Some(r))
        }
        _ => (None, None),
    };
    let mut label = a.label.clone().unwrap_or(stem);
    if a.label.is_none() {
        if family != ctx.cfg().tasks.target {
            label = format!("{label}-{}", family.name().to_lowercase());
        }
        if a.mode == ModeArg::Sampled {
            label.push_str("-sampled");
        }
    }
    let file = EvalFile {
        label: label.clone(),
        method: method_name(&bundle).to_string(),
        seed: ctx.seed,
        family,
        trainable_params: bundle.param_count(),
        accuracy: evaluation.accuracy,
        baseline_accuracy,
        result,
        evaluation,
    };
    ctx.emit_json(
        &format!("eval/{label}.json"),
        &file,
        ctx.meta().note("family", family),
    )?;
    match file.baseline_accuracy {
        Some(b) => println!("{label}: accuracy {:.4} (baseline {b:.4})", file.accuracy),
        None => println!("{label}: accuracy {:.4}", file.accuracy),
    }
    Ok(())
}

#[derive(Serialize)]
struct SwapRow {
    bank: String,
    params: usize,
    accuracy: f64,
    checksum_after: String,
}

#[derive(Serialize)]
struct SwapSummary {
    family: Family,
    baseline_accuracy: f64,
    checksum_before: String,
    evaluations: usize,
    weight_mutations: usize,
    rows: Vec<SwapRow>,
}

fn swap(ctx: &Ctx, a: &SwapArgs) -> Result<()> {
    let model = ctx.model(&a.model)?;
    let family = ctx.family(&a.family)?;
    let tasks = ctx.tasks(family)?;
    let before = model.checksum();
    let baseline = ctx.exp.baseline(&model, &tasks)?;
    let mut rows = Vec::with_capacity(a.banks.len());
    for path in &a.banks {
        let bundle = Bundle32::with_state(load_bank(path)?);
        bundle.validate(model.config())?;
        let ev = evaluate(
            &Adapted {
                model: &model,
                bundle: &bundle,
            },
            &tasks,
            EvalMode::Greedy,
        )?;
        rows.push(SwapRow {
            bank: path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            params: bundle.param_count(),
            accuracy: ev.accuracy,
            checksum_after: model.checksum(),
        });
    }
    let summary = SwapSummary {
        family,
        baseline_accuracy: baseline.accuracy,
        weight_mutations: rows.iter().filter(|r| r.checksum_after != before).count(),
        evaluations: rows.len(),
        checksum_before: before,
        rows,
    };
    ctx.emit_json("swap.json", &summary, ctx.meta())?;
    for r in &summary.rows {
        println!("{}: accuracy {:.4}", r.bank, r.accuracy);
    }
    println!(
        "{} evaluations, {} weight mutations",
        summary.evaluations, summary.weight_mutations
    );
    Ok(())
}

fn sweep(ctx: &Ctx, a: &SweepArgs) -> Result<()> {
    let s = &ctx.cfg().sweep;
    if a.kind == SweepKind::Scale {
        let rows = ctx.exp.scale_sweep()?;
        ctx.emit_csv("sweeps/scale.csv", &rows, ctx.meta())?;
        return Ok(());
    }
    let model = ctx.model(&a.model)?;
    let examples = ctx.data(&a.data)?.examples();
    let tasks = ctx.tasks(ctx.cfg().tasks.target)?;
    let cfg = ctx
        .exp
        .method_config(model.config(), Method::S0, ctx.seed, 0)?;
    match a.kind {
        SweepKind::Alpha => {
            let rows = alpha_sweep(&model, &examples, &tasks, &s.alphas, &cfg)?;
            ctx.emit_csv("sweeps/alpha.csv", &rows, ctx.meta())?;
        }
        SweepKind::Layers => {
            let rows = layer_sweep(&model, &examples, &tasks, &s.layer_groups, &cfg)?;
            ctx.emit_csv("sweeps/layers.csv", &rows, ctx.meta())?;
        }
        SweepKind::Datasize => {
            let (sizes, skipped): (Vec<usize>, Vec<usize>) =
                s.sizes.iter().partition(|&&n| n <= examples.len());
            let rows = datasize_sweep(&model, &examples, &tasks, &sizes, &s.size_seeds, &cfg)?;
            let meta = ctx
                .meta()
                .note("available", examples.len())
                .note("skipped_sizes", skipped);
            ctx.emit_csv("sweeps/datasize.csv", &rows, meta)?;
        }
        SweepKind::Scale => unreachable!(),
    }
    Ok(())
}

#[derive(Serialize)]
struct PersistenceRow {
    position: usize,
    kl: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct PersistenceSummary {
    prompt_length: usize,
    spearman_position_ratio: Option<f64>,
}

#[derive(Serialize)]
struct DivergenceSummary {
    tasks: usize,
    fail_to_pass: usize,
    pass_to_fail: usize,
    study: Option<statetune::analysis::DivergenceStudy>,
    note: Option<String>,
}

#[derive(Serialize)]
struct DivergenceCsvRow {
    task_id: u64,
    flip: String,
    index: i64,
    fraction: Option<f64>,
}

fn analyze(ctx: &Ctx, a: &AnalyzeArgs) -> Result<()> {
    let model = ctx.model(&a.model)?;
    match a.kind {
        AnalyzeKind::Persistence => {
            let bank = match &a.adapt.bank {
                Some(p) => load_bank(p)?,
                None => return Err(Error::Config("persistence analysis needs --bank".into())),
            };
            let curve = ctx.exp.mean_persistence(&model, &bank)?;
            let rows: Vec<PersistenceRow> = curve
                .positions()
                .map(|(position, kl, ratio)| PersistenceRow {
                    position,
                    kl,
                    ratio,
                })
                .collect();
            let pos: Vec<f64> = rows.iter().map(|r| r.position as f64).collect();
            let summary = PersistenceSummary {
                prompt_length: rows.len(),
                spearman_position_ratio: spearman(&pos, &curve.ratio).ok(),
            };
            ctx.emit_csv("analysis/persistence.csv", &rows, ctx.meta())?;
            ctx.emit_json("analysis/persistence.json", &summary, ctx.meta())?;
        }
        AnalyzeKind::Divergence => {
            let (bundle, _) = load_adaptation(&a.adapt)?;
            if bundle.active().is_none() {
                return Err(Error::Config(
                    "divergence analysis needs --bank or --adapter".into(),
                ));
            }
            let tasks = ctx.tasks(ctx.cfg().tasks.target)?;
            let base = ctx.exp.baseline(&model, &tasks)?;
            let tuned = evaluate(
                &Adapted {
                    model: &model,
                    bundle: &bundle,
                },
                &tasks,
                EvalMode::Greedy,
            )?;
            let records = divergence_records(&base, &tuned)?;
            let count = |f| {
                records
                    .iter()
                    .filter(|r: &&DivergenceRecord| r.flip == f)
                    .count()
            };
            let (study, note) =
                match summarize_flips(&records, statetune::analysis::divergence::DIVERGENCE_NULL_P)
                {
                    Ok(s) => (Some(s), None),
                    Err(e) => (None, Some(e.to_string())),
                };
            let summary = DivergenceSummary {
                tasks: records.len(),
                fail_to_pass: count(statetune::analysis::FlipType::FailToPass),
                pass_to_fail: count(statetune::analysis::FlipType::PassToFail),
                study,
                note,
            };
            let rows: Vec<DivergenceCsvRow> = records
                .iter()
                .map(|r| DivergenceCsvRow {
                    task_id: r.task_id,
                    flip: format!("{:?}", r.flip),
                    index: r.index,
                    fraction: r.fraction,
                })
                .collect();
            ctx.emit_csv("analysis/divergence.csv", &rows, ctx.meta())?;
            ctx.emit_json("analysis/divergence.json", &summary, ctx.meta())?;
        }
        AnalyzeKind::Probe => {
            let report = ctx.exp.probe(&model)?;
            ctx.emit_csv("analysis/probe.csv", &report.layers, ctx.meta())?;
            ctx.emit_json("analysis/probe.json", &report, ctx.meta())?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct PasskRow {
    k: usize,
    n: usize,
    pass_at_k: f64,
}

fn passk(ctx: &Ctx, a: &PasskArgs) -> Result<()> {
    let model = ctx.model(&a.model)?;
    let (bundle, stem) = load_adaptation(&a.adapt)?;
    bundle.validate(model.config())?;
    let family = ctx.family(&a.family)?;
    let tasks = ctx.tasks(family)?;
    let e = &ctx.cfg().eval;
    let mode = EvalMode::Sampled {
        n: e.samples,
        temperature: e.temperature,
        seed: ctx.seed,
    };
    let ev = evaluate(
        &Adapted {
            model: &model,
            bundle: &bundle,
        },
        &tasks,
        mode,
    )?;
    let correct: Vec<usize> = ev.records.iter().map(|r| r.correct).collect();
    let rows = e
        .pass_k
        .iter()
        .map(|&k| {
            pass_at_k_tasks(e.samples, &correct, k).map(|p| PasskRow {
                k,
                n: e.samples,
                pass_at_k: p.mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for r in &rows {
        println!("pass@{} = {:.4}", r.k, r.pass_at_k);
    }
    ctx.emit_csv(
        &format!("passk/{stem}.csv"),
        &rows,
        ctx.meta().note("family", family),
    )?;
    Ok(())
}

const METHOD_ORDER: [&str; 4] = ["s0", "offset", "lora", "prefix"];

#[derive(Serialize)]
struct SeedCsvRow<'a> {
    method: &'a str,
    seed: u64,
    params: usize,
    baseline_accuracy: f64,
    tuned_accuracy: f64,
    delta: f64,
    degraded: usize,
    flipped: usize,
}

fn seed_rows(reports: &[EvalReport]) -> Vec<SeedCsvRow<'_>> {
    reports
        .iter()
        .flat_map(|r| {
            r.per_seed.iter().map(move |s| SeedCsvRow {
                method: &r.method,
                seed: s.seed,
                params: r.trainable_params,
                baseline_accuracy: s.baseline_accuracy,
                tuned_accuracy: s.tuned_accuracy,
                delta: s.delta,
                degraded: s.degraded,
                flipped: s.flipped,
            })
        })
        .collect()
}

fn table_text(reports: &[EvalReport]) -> String {
    let mut s = render_table(reports);
    for r in reports {
        s.push('\n');
        s.push_str(&render_seed_table(r));
    }
    s
}

fn report(ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    if a.run {
        return match a.control {
            Some(Control::Prefix) => prefix_control(ctx),
            None => run_comparison(ctx, &a.model),
        };
    }
    let dir = ctx.path("eval");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| !p.to_string_lossy().ends_with(".meta.json"))
        .collect();
    files.sort();
    let target = ctx.cfg().tasks.target;
    let mut groups: BTreeMap<usize, (String, usize, Vec<SeedResult>)> = BTreeMap::new();
    for p in &files {
        let f: EvalFile = serde_json::from_slice(&std::fs::read(p)?)?;
        let Some(result) = f.result else { continue };
        if f.family != target {
            continue;
        }
        let order = METHOD_ORDER
            .iter()
            .position(|m| *m == f.method)
            .unwrap_or(METHOD_ORDER.len());
        let g = groups
            .entry(order)
            .or_insert_with(|| (f.method.clone(), f.trainable_params, Vec::new()));
        g.2.push(result);
    }
    if groups.is_empty() {
        return Err(Error::Config(format!(
            "no adapted greedy evaluations of {target} under {}",
            dir.display()
        )));
    }
    let mut reports = Vec::new();
    for (_, (method, params, mut rows)) in groups {
        rows.sort_by_key(|r| r.seed);
        let base = baseline_report(&rows)?;
        reports.push(aggregate(&method, params, &rows, Some(&base))?);
    }
    let text = table_text(&reports);
    print!("{text}");
    ctx.emit("report.txt", text.as_bytes(), ctx.meta())?;
    ctx.emit_json("report.json", &reports, ctx.meta())?;
    ctx.emit_csv("report.csv", &seed_rows(&reports), ctx.meta())?;
    Ok(())
}

#[derive(Serialize)]
struct BudgetNote {
    s0_params: usize,
    lora_rank: usize,
    lora_params: usize,
    relative_gap: f64,
}

#[derive(Serialize)]
struct ComparisonFile<'a> {
    family: Family,
    baseline_accuracy: f64,
    budget: Option<BudgetNote>,
    reports: &'a [EvalReport],
    pairwise: &'a [statetune::experiment::PairwiseTest],
    dataset_sizes: &'a [(u64, usize)],
    checksum_before: &'a str,
    checksums_after: &'a [String],
    backbone_untouched: bool,
}

fn run_comparison(ctx: &Ctx, m: &ModelArg) -> Result<()> {
    let model = ctx.model(m)?;
    let cfg = ctx.cfg();
    let cmp = ctx.exp.compare(&model, &cfg.eval.methods)?;
    let s0_params = ctx.exp.s0_budget(model.config())?;
    let budget = if cfg.eval.methods.contains(&Method::Lora) {
        let b = match_lora_rank(
            model.config(),
            &cfg.tuning.lora_targets,
            s0_params,
            cfg.eval.lora_max_rank,
        )?;
        Some(BudgetNote {
            s0_params,
            lora_rank: b.config,
            lora_params: b.params,
            relative_gap: b.relative_gap(),
        })
    } else {
        None
    };
    let file = ComparisonFile {
        family: cmp.family,
        baseline_accuracy: cmp.baseline.accuracy,
        budget,
        reports: &cmp.reports,
        pairwise: &cmp.pairwise,
        dataset_sizes: &cmp.dataset_sizes,
        checksum_before: &cmp.checksum_before,
        checksums_after: &cmp.checksums_after,
        backbone_untouched: cmp.backbone_untouched(),
    };
    let text = table_text(&cmp.reports);
    print!("{text}");
    ctx.emit("comparison/table.txt", text.as_bytes(), ctx.meta())?;
    ctx.emit_json("comparison/comparison.json", &file, ctx.meta())?;
    ctx.emit_csv("comparison/seeds.csv", &seed_rows(&cmp.reports), ctx.meta())?;
    let first = cfg.eval.methods[0];
    let families = ctx.exp.cross_family(&model, &cmp, first)?;
    ctx.emit_json(
        "comparison/cross_family.json",
        &families,
        ctx.meta().note("method", first.name()),
    )?;
    #[derive(Serialize)]
    struct FamilyRow<'a> {
        family: &'a str,
        baseline_accuracy: f64,
        mean_delta: f64,
        std: Option<f64>,
        p_value: Option<f64>,
    }
    let rows: Vec<FamilyRow> = families
        .iter()
        .map(|f| FamilyRow {
            family: f.family.name(),
            baseline_accuracy: f.baseline_accuracy,
            mean_delta: f.report.mean,
            std: f.report.std,
            p_value: f.report.p_value,
        })
        .collect();
    ctx.emit_csv(
        "comparison/cross_family.csv",
        &rows,
        ctx.meta().note("method", first.name()),
    )?;
    Ok(())
}

fn prefix_control(ctx: &Ctx) -> Result<()> {
    let (model, cmp) = ctx.exp.prefix_control()?;
    let text = table_text(&cmp.reports);
    print!("{text}");
    let meta = || {
        ctx.meta()
            .note("backbone_checksum", model.checksum())
            .note("layers", &model.config().layer_pattern)
    };
    ctx.emit("control/prefix_table.txt", text.as_bytes(), meta())?;
    ctx.emit_json("control/prefix.json", &cmp.reports, meta())?;
    ctx.emit_csv("control/prefix_seeds.csv", &seed_rows(&cmp.reports), meta())?;
    Ok(())
}
