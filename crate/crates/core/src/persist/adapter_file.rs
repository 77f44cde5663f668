//! JSON files for offset, LoRA, and prefix adapters. S0 banks use the
//! binary bank format instead; this format accepts them too so every
//! method can be stored uniformly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::persist::output::write_atomic;
use crate::scalar::Scalar;
use crate::tuning::{
    AdaptationBundle, LoraAdapters, LoraPair, LoraTarget, Method, OffsetBank, PrefixPair,
    PrefixParams, StateBank,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterEntry {
    pub layer: usize,
    /// `state`, `offset`, `a`, `b`, `keys`, or `values`.
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<LoraTarget>,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterFile {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_virtual: Option<usize>,
    pub entries: Vec<AdapterEntry>,
}

fn entry<T: Scalar>(
    layer: usize,
    role: &str,
    target: Option<LoraTarget>,
    t: &Tensor<T>,
) -> AdapterEntry {
    AdapterEntry {
        layer,
        role: role.to_string(),
        target,
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|x| x.to_f64_lossless()).collect(),
    }
}

type Keyed<T> = BTreeMap<(usize, Option<LoraTarget>, String), Tensor<T>>;

fn take<T>(
    tensors: &mut Keyed<T>,
    layer: usize,
    target: Option<LoraTarget>,
    role: &str,
) -> Result<Tensor<T>> {
    tensors
        .remove(&(layer, target, role.to_string()))
        .ok_or_else(|| bad(format!("missing {role} on layer {layer}")))
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        field: "adapter",
        detail: detail.into(),
    }
}

impl AdapterFile {
    pub fn from_bundle<T: Scalar>(bundle: &AdaptationBundle<T>) -> Result<Self> {
        let method = bundle
            .active()
            .ok_or_else(|| bad("bundle has no active adaptation"))?;
        let mut f = AdapterFile {
            method,
            alpha: None,
            rank: None,
            lora_alpha: None,
            n_virtual: None,
            entries: Vec::new(),
        };
        match method {
            Method::S0 => {
                let b = bundle.state.as_ref().expect("active state");
                f.alpha = Some(b.alpha);
                f.entries = b
                    .states
                    .iter()
                    .map(|(&l, t)| entry(l, "state", None, t))
                    .collect();
            }
            Method::Offset => {
                let b = bundle.offset.as_ref().expect("active offset");
                f.entries = b
                    .offsets
                    .iter()
                    .map(|(&l, t)| entry(l, "offset", None, t))
                    .collect();
            }
            Method::Lora => {
                let b = bundle.lora.as_ref().expect("active lora");
                f.rank = Some(b.rank);
                f.lora_alpha = Some(b.lora_alpha);
                for (&(l, tgt), p) in &b.pairs {
                    f.entries.push(entry(l, "a", Some(tgt), &p.a));
                    f.entries.push(entry(l, "b", Some(tgt), &p.b));
                }
            }
            Method::Prefix => {
                let b = bundle.prefix.as_ref().expect("active prefix");
                f.n_virtual = Some(b.n_virtual);
                for (&l, p) in &b.layers {
                    f.entries.push(entry(l, "keys", None, &p.keys));
                    f.entries.push(entry(l, "values", None, &p.values));
                }
            }
        }
        Ok(f)
    }

    pub fn into_bundle<T: Scalar>(self) -> Result<AdaptationBundle<T>> {
        let mut tensors: Keyed<T> = BTreeMap::new();
        for e in self.entries {
            let t = Tensor::from_vec(&e.shape, e.data.into_iter().map(T::of).collect())
                .map_err(|e| bad(e.to_string()))?;
            if tensors
                .insert((e.layer, e.target, e.role.clone()), t)
                .is_some()
            {
                return Err(bad(format!(
                    "duplicate {} entry on layer {}",
                    e.role, e.layer
                )));
            }
        }
        let roles = |want: &[&str], tensors: &Keyed<T>| -> Result<()> {
            match tensors.keys().find(|k| !want.contains(&k.2.as_str())) {
                Some(k) => Err(bad(format!(
                    "unexpected role {:?} for {}",
                    k.2,
                    self.method.name()
                ))),
                None => Ok(()),
            }
        };
        let bundle = match self.method {
            Method::S0 => {
                roles(&["state"], &tensors)?;
                let alpha = self.alpha.ok_or_else(|| bad("S0 adapter needs alpha"))?;
                let states = std::mem::take(&mut tensors)
                    .into_iter()
                    .map(|((l, _, _), t)| (l, t))
                    .collect();
                AdaptationBundle::with_state(StateBank { alpha, states })
            }
            Method::Offset => {
                roles(&["offset"], &tensors)?;
                let offsets = std::mem::take(&mut tensors)
                    .into_iter()
                    .map(|((l, _, _), t)| (l, t))
                    .collect();
                AdaptationBundle::with_offset(OffsetBank { offsets })
            }
            Method::Lora => {
                roles(&["a", "b"], &tensors)?;
                let rank = self.rank.ok_or_else(|| bad("LoRA adapter needs rank"))?;
                let lora_alpha = self
                    .lora_alpha
                    .ok_or_else(|| bad("LoRA adapter needs lora_alpha"))?;
                let keys: Vec<(usize, Option<LoraTarget>)> = tensors
                    .keys()
                    .filter(|k| k.2 == "a")
                    .map(|k| (k.0, k.1))
                    .collect();
                let mut pairs = BTreeMap::new();
                for (l, tgt) in keys {
                    let target =
                        tgt.ok_or_else(|| bad(format!("LoRA entry on layer {l} has no target")))?;
                    pairs.insert(
                        (l, target),
                        LoraPair {
                            a: take(&mut tensors, l, tgt, "a")?,
                            b: take(&mut tensors, l, tgt, "b")?,
                        },
                    );
                }
                if let Some(k) = tensors.keys().next() {
                    return Err(bad(format!("unpaired LoRA factor on layer {}", k.0)));
                }
                AdaptationBundle::with_lora(LoraAdapters {
                    rank,
                    lora_alpha,
                    pairs,
                })
            }
            Method::Prefix => {
                roles(&["keys", "values"], &tensors)?;
                let n_virtual = self
                    .n_virtual
                    .ok_or_else(|| bad("prefix adapter needs n_virtual"))?;
                let ls: Vec<usize> = tensors
                    .keys()
                    .filter(|k| k.2 == "keys")
                    .map(|k| k.0)
                    .collect();
                let mut layers = BTreeMap::new();
                for l in ls {
                    layers.insert(
                        l,
                        PrefixPair {
                            keys: take(&mut tensors, l, None, "keys")?,
                            values: take(&mut tensors, l, None, "values")?,
                        },
                    );
                }
                if let Some(k) = tensors.keys().next() {
                    return Err(bad(format!("unpaired prefix tensor on layer {}", k.0)));
                }
                AdaptationBundle::with_prefix(PrefixParams { n_virtual, layers })
            }
        };
        Ok(bundle)
    }
}

pub fn save_adapter<T: Scalar>(path: &Path, bundle: &AdaptationBundle<T>) -> Result<()> {
    let mut bytes = serde_json::to_vec(&AdapterFile::from_bundle(bundle)?)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_adapter<T: Scalar>(path: &Path) -> Result<AdaptationBundle<T>> {
    let f: AdapterFile = serde_json::from_slice(&std::fs::read(path)?)?;
    f.into_bundle()
}
