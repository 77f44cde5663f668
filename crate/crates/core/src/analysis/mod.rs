//! Mechanistic analyses of tuned initial states.

pub mod divergence;
pub mod persistence;
pub mod probe;
pub mod sweeps;

pub use divergence::{
    divergence_records, divergence_study, first_divergence, summarize_flips, DivergenceRecord,
    DivergenceStudy, FlipType,
};
pub use persistence::{
    kl_divergence, persistence_kl, LinearReadoutToy, PersistenceCurve, KL_EPSILON,
};
pub use probe::{
    extract_features, linear_probe, probe_layers, roc_auc, LayerAuc, Pca, ProbeFeatures,
    ProbeResult,
};
pub use sweeps::{
    alpha_sweep, datasize_sweep, layer_sweep, subsample, AlphaRow, DataSizeRow, LayerRow,
};
