//! Toy hybrid recurrent/attention language model.

pub mod config;
pub mod forward;
pub mod generate;
pub mod pretrain;
pub mod weights;

pub use config::{LayerKind, ModelConfig, Topology};
pub use forward::{ForwardOutput, Token};
pub use generate::{argmax, generate_greedy, generate_sampled, Adapted, Policy, EOS};
pub use pretrain::{pretrain_backbone, PretrainConfig, PretrainReport};
pub use weights::{HybridModel, Layout};
