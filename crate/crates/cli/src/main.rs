mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "statetune",
    version,
    about = "Initial-state tuning experiments on toy hybrid models"
)]
pub struct Cli {
    /// Seed for this step's randomness (initialization, sampling, tuning).
    /// Defaults to the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Experiment TOML file; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Every output is written beneath this directory.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pretrain a backbone on the task-mixture corpus and freeze it.
    Pretrain,
    /// Sample verified completions for the target family's training tasks.
    Collect(ModelArg),
    /// Train one adaptation on collected data.
    Train(TrainArgs),
    /// Score the model, optionally with a bank or adapter, on held-out tasks.
    Eval(EvalArgs),
    /// Evaluate several banks against one frozen model without touching its weights.
    Swap(SwapArgs),
    /// Run a parameter sweep.
    Sweep(SweepArgs),
    /// Run a mechanistic analysis.
    Analyze(AnalyzeArgs),
    /// Sampled pass@k on held-out tasks.
    Passk(PasskArgs),
    /// Aggregate per-seed evaluations into a comparison table.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArg {
    /// Checkpoint path; defaults to `<out-dir>/model.s0md`.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct AdaptArg {
    /// Binary S0 bank file.
    #[arg(long, conflicts_with = "adapter")]
    pub bank: Option<PathBuf>,
    /// JSON adapter file (any method).
    #[arg(long)]
    pub adapter: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    S0,
    Offset,
    Lora,
    Prefix,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value = "s0")]
    pub method: MethodArg,
    /// Verified JSONL; defaults to `<out-dir>/data/verified-seed<seed>.jsonl`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Keep the configured rank / prefix length instead of matching the S0 budget.
    #[arg(long)]
    pub no_match: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Sampled,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub adapt: AdaptArg,
    #[arg(long, value_enum, default_value = "greedy")]
    pub mode: ModeArg,
    /// Task family to score; defaults to the config's target.
    #[arg(long)]
    pub family: Option<String>,
    /// Output name under `<out-dir>/eval/`; derived from the inputs if omitted.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Args, Debug)]
pub struct SwapArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Bank files to switch between.
    #[arg(long = "bank", num_args = 1.., required = true)]
    pub banks: Vec<PathBuf>,
    #[arg(long)]
    pub family: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Alpha,
    Layers,
    Datasize,
    Scale,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, value_enum)]
    pub kind: SweepKind,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeKind {
    Persistence,
    Divergence,
    Probe,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub adapt: AdaptArg,
    #[arg(long, value_enum)]
    pub kind: AnalyzeKind,
}

#[derive(Args, Debug)]
pub struct PasskArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub adapt: AdaptArg,
    #[arg(long)]
    pub family: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Control {
    /// Prefix tuning on a pure-attention backbone.
    Prefix,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Train and evaluate every configured method on every configured seed
    /// instead of reading `<out-dir>/eval/`.
    #[arg(long)]
    pub run: bool,
    /// With `--run`, run a control experiment instead.
    #[arg(long, value_enum, requires = "run")]
    pub control: Option<Control>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
