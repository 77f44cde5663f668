pub mod analysis;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod persist;
pub mod recurrence;
pub mod scalar;
pub mod tasks;
pub mod tuning;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision model, the precision experiments run in.
pub type Model32 = model::HybridModel<f32>;
/// Double-precision model, used for gradient and identity checks.
pub type Model64 = model::HybridModel<f64>;
pub type Bundle32 = tuning::AdaptationBundle<f32>;
pub type Bundle64 = tuning::AdaptationBundle<f64>;
pub type StateBank32 = tuning::StateBank<f32>;
pub type StateBank64 = tuning::StateBank<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
