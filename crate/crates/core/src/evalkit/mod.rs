//! Accuracy evaluation, pass@k, and the statistics used to compare methods across seeds.

pub mod evaluate;
pub mod passk;
pub mod report;
pub mod stats;

pub use evaluate::{evaluate, EvalMode, Evaluation, TaskRecord};
pub use passk::{pass_at_k, pass_at_k_exact, pass_at_k_tasks, PassAtK};
pub use report::{
    aggregate, baseline_report, render_seed_table, render_table, EvalReport, SeedResult,
};
pub use stats::{mean, sample_std, sign_test, spearman, welch_t, WelchResult};
