//! Adaptation methods trained against a frozen backbone.

pub mod bank;
pub mod budget;
pub mod loss;
pub mod trainers;

pub use bank::{
    recurrent_state_numel, AdaptationBundle, LoraAdapters, LoraPair, LoraTarget, Method,
    OffsetBank, PrefixPair, PrefixParams, StateBank,
};
pub use budget::{
    lora_param_count, match_lora_rank, match_parameter_budget, match_prefix_length,
    prefix_param_count, BudgetMatch,
};
pub use loss::{completion_loss, loss_and_grad, TrainExample};
pub use trainers::{
    train_bundle, train_lora, train_method, train_offset, train_prefix, train_s0, TraceRow,
    TrainReport, TuningConfig,
};
