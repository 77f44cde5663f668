//! End-to-end experiment driver shared by the CLI and the acceptance suite.

pub mod config;
pub mod run;

pub use config::{EvalSetup, ExperimentConfig, ProbeSetup, SweepSetup, TaskSetup};
pub use run::{
    Comparison, Experiment, FamilyReport, MethodRun, PairwiseTest, ProbeReport, ScaleRow,
};
