//! Binary bank and checkpoint files, atomic output writing, and metadata sidecars.

pub mod adapter_file;
pub mod bank_file;
pub mod checkpoint;
mod framing;
pub mod output;

pub use adapter_file::{load_adapter, save_adapter, AdapterEntry, AdapterFile};
pub use bank_file::{
    bank_file_size, decode_bank, encode_bank, load_bank, save_bank, BANK_MAGIC, BANK_VERSION,
};
pub use checkpoint::{
    decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION,
};
pub use output::{config_hash, csv_bytes, emit, json_bytes, write_atomic, Sidecar};
