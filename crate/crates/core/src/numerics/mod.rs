//! Dense tensors, seeded randomness, reverse-mode gradients, and Adam.

pub mod adam;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamMoments};
pub use graph::{log_softmax_cross_entropy, Gradients, Graph, Var};
pub use rng::Prng;
pub use tensor::Tensor;
