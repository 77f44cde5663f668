//! The `S0MD` model checkpoint, framed like the bank file.
//!
//! ```text
//! "S0MD" | version u16 | config_len u32 | config JSON | frozen u8 | count u32
//! count × ( name_len u16 | name | rank u8 | dims rank×u32 | payload f64[numel] )
//! crc32 u32
//! ```
//!
//! Payloads are stored as `f64`, so both `f32` and `f64` models round-trip exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{HybridModel, ModelConfig};
use crate::numerics::Tensor;
use crate::persist::framing::{Reader, Writer};
use crate::persist::output::write_atomic;
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"S0MD";
pub const MODEL_VERSION: u16 = 1;

fn too_big(field: &'static str, what: usize) -> Error {
    Error::Format {
        field,
        detail: format!("{what} does not fit the field width"),
    }
}

pub fn encode_model<T: Scalar>(model: &HybridModel<T>) -> Result<Vec<u8>> {
    let mut w = Writer::new(MODEL_MAGIC, MODEL_VERSION);
    let config = serde_json::to_vec(model.config())?;
    w.u32(u32::try_from(config.len()).map_err(|_| too_big("config", config.len()))?);
    w.bytes(&config);
    w.u8(u8::from(model.is_frozen()));
    let n = model.params().len();
    w.u32(u32::try_from(n).map_err(|_| too_big("count", n))?);
    for (name, t) in model.named_params() {
        w.u16(u16::try_from(name.len()).map_err(|_| too_big("name", name.len()))?);
        w.bytes(name.as_bytes());
        w.u8(u8::try_from(t.shape().len()).map_err(|_| too_big("rank", t.shape().len()))?);
        for &d in t.shape() {
            w.u32(u32::try_from(d).map_err(|_| too_big("dims", d))?);
        }
        for &x in t.data() {
            w.f64(x.to_f64_lossless());
        }
    }
    Ok(w.finish())
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<HybridModel<T>> {
    let mut r = Reader::open(bytes, MODEL_MAGIC, MODEL_VERSION)?;
    let len = r.u32("config")? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.bytes(len, "config")?).map_err(|e| Error::Format {
            field: "config",
            detail: e.to_string(),
        })?;
    let frozen = match r.u8("frozen")? {
        0 => false,
        1 => true,
        b => {
            return Err(Error::Format {
                field: "frozen",
                detail: format!("flag byte {b}"),
            })
        }
    };
    let count = r.u32("count")? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let nlen = r.u16("name")? as usize;
        let name = std::str::from_utf8(r.bytes(nlen, "name")?)
            .map_err(|e| Error::Format {
                field: "name",
                detail: e.to_string(),
            })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= bytes.len() / 8)
            .ok_or_else(|| Error::Format {
                field: "dims",
                detail: format!("{name} shape {shape:?} exceeds the file"),
            })?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(T::of(r.f64("payload")?));
        }
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Format {
            field: "dims",
            detail: e.to_string(),
        })?;
        named.push((name, t));
    }
    r.finish()?;
    let mut model = HybridModel::from_named(config, named).map_err(|e| Error::Format {
        field: "tensors",
        detail: e.to_string(),
    })?;
    if frozen {
        model.freeze();
    }
    Ok(model)
}

pub fn save_model<T: Scalar>(path: &Path, model: &HybridModel<T>) -> Result<()> {
    write_atomic(path, &encode_model(model)?)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<HybridModel<T>> {
    decode_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_checksum_and_frozen_flag() {
        let mut m = HybridModel::<f32>::init(ModelConfig::interleaved(2, 16, 2, 8), 5).unwrap();
        m.freeze();
        let bytes = encode_model(&m).unwrap();
        let back: HybridModel<f32> = decode_model(&bytes).unwrap();
        assert_eq!(back.checksum(), m.checksum());
        assert!(back.is_frozen());
        assert_eq!(encode_model(&back).unwrap(), bytes);

        let mut bad = bytes;
        let mid = bad.len() / 2;
        bad[mid] ^= 1;
        assert!(matches!(
            decode_model::<f32>(&bad),
            Err(Error::Format { field: "crc32", .. })
        ));
    }
}
