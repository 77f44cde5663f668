//! The `S0BK` state-bank file.
//!
//! ```text
//! "S0BK" | version u16 | alpha f64 | count u16
//! count × ( layer u16 | shape 3×u32 | payload f32[numel] )
//! crc32 u32   (over every preceding byte)
//! ```
//!
//! All integers and floats are little-endian. Payload values are narrowed to
//! `f32` with round-to-nearest-even, so a bank whose values are already
//! `f32`-representable round-trips bitwise.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::persist::framing::{Reader, Writer};
use crate::persist::output::write_atomic;
use crate::scalar::Scalar;
use crate::tuning::StateBank;

pub const BANK_MAGIC: &[u8; 4] = b"S0BK";
pub const BANK_VERSION: u16 = 1;

/// Exact file size for a bank with the given per-layer element counts.
pub fn bank_file_size(numels: &[usize]) -> usize {
    let header = 4 + 2 + 8 + 2;
    let layers: usize = numels.iter().map(|n| 2 + 3 * 4 + 4 * n).sum();
    header + layers + 4
}

pub fn encode_bank<T: Scalar>(bank: &StateBank<T>) -> Result<Vec<u8>> {
    let count = u16::try_from(bank.states.len()).map_err(|_| Error::Format {
        field: "count",
        detail: format!("{} layers exceed u16", bank.states.len()),
    })?;
    let mut w = Writer::new(BANK_MAGIC, BANK_VERSION);
    w.f64(bank.alpha);
    w.u16(count);
    for (&layer, t) in &bank.states {
        let layer = u16::try_from(layer).map_err(|_| Error::Format {
            field: "layer",
            detail: format!("layer index {layer} exceeds u16"),
        })?;
        let [a, b, c] = <[usize; 3]>::try_from(t.shape()).map_err(|_| Error::Format {
            field: "shape",
            detail: format!("state shape {:?} is not rank 3", t.shape()),
        })?;
        w.u16(layer);
        for d in [a, b, c] {
            w.u32(u32::try_from(d).map_err(|_| Error::Format {
                field: "shape",
                detail: format!("dimension {d} exceeds u32"),
            })?);
        }
        for &x in t.data() {
            w.f32(x.to_f64_lossless() as f32);
        }
    }
    Ok(w.finish())
}

pub fn decode_bank<T: Scalar>(bytes: &[u8]) -> Result<StateBank<T>> {
    let mut r = Reader::open(bytes, BANK_MAGIC, BANK_VERSION)?;
    let alpha = r.f64("alpha")?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Format {
            field: "alpha",
            detail: format!("{alpha} is not a positive finite number"),
        });
    }
    let count = r.u16("count")?;
    let mut states = BTreeMap::new();
    for _ in 0..count {
        let layer = r.u16("layer")? as usize;
        let shape = [
            r.u32("shape")? as usize,
            r.u32("shape")? as usize,
            r.u32("shape")? as usize,
        ];
        if shape.contains(&0) {
            return Err(Error::Format {
                field: "shape",
                detail: format!("layer {layer} has zero-sized shape {shape:?}"),
            });
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= bytes.len() / 4)
            .ok_or_else(|| Error::Format {
                field: "shape",
                detail: format!("layer {layer} shape {shape:?} exceeds the file"),
            })?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(T::of(r.f32("payload")? as f64));
        }
        if states
            .insert(layer, Tensor::from_vec(&shape, data)?)
            .is_some()
        {
            return Err(Error::Format {
                field: "layer",
                detail: format!("layer {layer} appears twice"),
            });
        }
    }
    r.finish()?;
    Ok(StateBank { alpha, states })
}

pub fn save_bank<T: Scalar>(path: &Path, bank: &StateBank<T>) -> Result<()> {
    write_atomic(path, &encode_bank(bank)?)
}

pub fn load_bank<T: Scalar>(path: &Path) -> Result<StateBank<T>> {
    decode_bank(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> StateBank<f32> {
        let mut states = BTreeMap::new();
        states.insert(
            0,
            Tensor::from_vec(
                &[1, 2, 3],
                vec![1.0, -2.5, 0.0, 3.25, f32::MIN_POSITIVE, -0.0],
            )
            .unwrap(),
        );
        states.insert(2, Tensor::from_vec(&[2, 1, 1], vec![7.0, 8.0]).unwrap());
        StateBank {
            alpha: 0.07,
            states,
        }
    }

    #[test]
    fn size_formula_and_round_trip() {
        let bank = sample();
        let bytes = encode_bank(&bank).unwrap();
        assert_eq!(bytes.len(), bank_file_size(&[6, 2]));
        let back: StateBank<f32> = decode_bank(&bytes).unwrap();
        assert_eq!(encode_bank(&back).unwrap(), bytes);
    }

    #[test]
    fn errors_name_the_field() {
        let bytes = encode_bank(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[20] ^= 0x10;
        assert!(matches!(
            decode_bank::<f32>(&bad),
            Err(Error::Format { field: "crc32", .. })
        ));

        let mut w = Writer::new(b"XXXX", BANK_VERSION);
        w.f64(1.0);
        w.u16(0);
        assert!(matches!(
            decode_bank::<f32>(&w.finish()),
            Err(Error::Format { field: "magic", .. })
        ));

        let mut w = Writer::new(BANK_MAGIC, 9);
        w.f64(1.0);
        w.u16(0);
        assert!(matches!(
            decode_bank::<f32>(&w.finish()),
            Err(Error::Format {
                field: "version",
                ..
            })
        ));

        assert!(matches!(
            decode_bank::<f32>(&bytes[..5]),
            Err(Error::Format {
                field: "length",
                ..
            })
        ));
    }
}
