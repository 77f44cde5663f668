use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{contract, shape_err, Result};
use crate::model::config::{LayerKind, ModelConfig};
use crate::numerics::{Prng, Tensor};
use crate::recurrence::RecurrentKind;
use crate::scalar::Scalar;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal(f64),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Indices into the flat parameter list for one recurrent mixer.
///
/// For SSD the projections play the roles `w_q → C`, `w_k → B̄`, `w_v → x`
/// and there is no write gate.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentLayout {
    pub kind: RecurrentKind,
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub w_decay: usize,
    pub b_decay: usize,
    pub write_gate: Option<(usize, usize)>,
    pub w_o: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayout {
    /// q, k, v, o in [`crate::tuning::LoraTarget`] order.
    pub proj: [usize; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayout {
    pub w_in: usize,
    pub b_in: usize,
    pub w_out: usize,
    pub b_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub recurrent: Option<RecurrentLayout>,
    pub attention: Option<AttentionLayout>,
    pub mlp: MlpLayout,
}

/// Names, shapes and positions of every backbone weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub blocks: Vec<BlockLayout>,
    pub lm_head: usize,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
        self.specs.len() - 1
    }

    fn normal(&mut self, name: String, shape: &[usize]) -> usize {
        self.add(name, shape, Init::Normal(INIT_STD))
    }
}

impl Layout {
    pub fn build(config: &ModelConfig) -> Self {
        let c = config;
        let d = c.d_model;
        let h = c.heads;
        let mut b = Builder { specs: Vec::new() };
        let tok_emb = b.normal("tok_emb".into(), &[c.vocab_size, d]);
        let pos_emb = b.normal("pos_emb".into(), &[c.max_seq_len, d]);
        let mut blocks = Vec::with_capacity(c.n_layers);
        for (i, kind) in c.layer_pattern.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            let recurrent = kind.recurrent().map(|rk| {
                let (qw, vw) = match rk {
                    RecurrentKind::Gdn => (c.key_dim, c.value_dim),
                    RecurrentKind::Ssd => (c.state_dim, c.value_dim),
                };
                let w_q = b.normal(p("rec.w_q"), &[d, h * qw]);
                let w_k = b.normal(p("rec.w_k"), &[d, h * qw]);
                let w_v = b.normal(p("rec.w_v"), &[d, h * vw]);
                let w_decay = b.normal(p("rec.w_decay"), &[d, h]);
                let b_decay = b.add(p("rec.b_decay"), &[h], Init::Const(c.decay_bias_init));
                let write_gate = (rk == RecurrentKind::Gdn).then(|| {
                    (
                        b.normal(p("rec.w_write"), &[d, h]),
                        b.add(p("rec.b_write"), &[h], Init::Const(0.0)),
                    )
                });
                let w_o = b.normal(p("rec.w_o"), &[h * vw, d]);
                RecurrentLayout {
                    kind: rk,
                    w_q,
                    w_k,
                    w_v,
                    w_decay,
                    b_decay,
                    write_gate,
                    w_o,
                }
            });
            let attention = c.layer_has_attention(i).then(|| AttentionLayout {
                proj: ["q", "k", "v", "o"].map(|n| b.normal(p(&format!("attn.w_{n}")), &[d, d])),
            });
            let mlp = MlpLayout {
                w_in: b.normal(p("mlp.w_in"), &[d, c.mlp_hidden]),
                b_in: b.add(p("mlp.b_in"), &[c.mlp_hidden], Init::Const(0.0)),
                w_out: b.normal(p("mlp.w_out"), &[c.mlp_hidden, d]),
                b_out: b.add(p("mlp.b_out"), &[d], Init::Const(0.0)),
            };
            debug_assert!(recurrent.is_some() || *kind == LayerKind::Attn);
            blocks.push(BlockLayout {
                recurrent,
                attention,
                mlp,
            });
        }
        let lm_head = b.normal("lm_head".into(), &[d, c.vocab_size]);
        Self {
            specs: b.specs,
            tok_emb,
            pos_emb,
            blocks,
            lm_head,
        }
    }

    pub fn param_count(&self) -> usize {
        self.specs
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }
}

/// Toy hybrid backbone. Weights are shared immutable tensors so graph
/// leaves can borrow them without copying.
#[derive(Clone)]
pub struct HybridModel<T> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<Arc<Tensor<T>>>,
    frozen: bool,
}

impl<T: Scalar> std::fmt::Debug for HybridModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HybridModel")
            .field("config", &self.config)
            .field("params", &self.layout.param_count())
            .field("frozen", &self.frozen)
            .finish()
    }
}

impl<T: Scalar> HybridModel<T> {
    /// Gaussian init with std 0.02 for matrices, constants for biases; one
    /// sequential stream of the seeded generator in layout order.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config);
        let mut rng = Prng::new(seed);
        let params = layout
            .specs
            .iter()
            .map(|s| {
                Arc::new(match s.init {
                    Init::Normal(std) => Tensor::randn(&s.shape, std, &mut rng),
                    Init::Const(c) => Tensor::full(&s.shape, T::of(c)),
                })
            })
            .collect();
        Ok(Self {
            config,
            layout,
            params,
            frozen: false,
        })
    }

    /// Rebuilds a model from named tensors in layout order.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config);
        if named.len() != layout.specs.len() {
            return shape_err(format!(
                "expected {} tensors, got {}",
                layout.specs.len(),
                named.len()
            ));
        }
        let mut params = Vec::with_capacity(named.len());
        for (spec, (name, t)) in layout.specs.iter().zip(named) {
            if spec.name != name || spec.shape != t.shape() {
                return shape_err(format!(
                    "tensor {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                ));
            }
            params.push(Arc::new(t));
        }
        Ok(Self {
            config,
            layout,
            params,
            frozen: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[Arc<Tensor<T>>] {
        &self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.layout
            .specs
            .iter()
            .map(|s| s.name.as_str())
            .zip(self.params.iter().map(|p| p.as_ref()))
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Mutable weights for backbone training; refused once frozen.
    pub fn params_mut(&mut self) -> Result<Vec<&mut Tensor<T>>> {
        if self.frozen {
            return contract("model is frozen; backbone weights cannot be modified");
        }
        Ok(self.params.iter_mut().map(Arc::make_mut).collect())
    }

    /// SHA-256 over parameter names, shapes, and little-endian f64 values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named_params() {
            h.update(name.as_bytes());
            for &s in t.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for &x in t.data() {
                h.update(x.to_f64_lossless().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> HybridModel<U> {
        HybridModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| Arc::new(p.cast())).collect(),
            frozen: self.frozen,
        }
    }

    /// Replaces one weight; used to build hand-weighted test models.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.frozen {
            return contract("model is frozen; backbone weights cannot be modified");
        }
        let i = self
            .layout
            .specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| crate::Error::Contract(format!("no parameter named {name}")))?;
        if self.layout.specs[i].shape != value.shape() {
            return shape_err(format!(
                "{name}: expected {:?}, got {:?}",
                self.layout.specs[i].shape,
                value.shape()
            ));
        }
        self.params[i] = Arc::new(value);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Parameter count derived by hand from the architecture description.
    fn analytic_count(c: &ModelConfig) -> usize {
        let d = c.d_model;
        let h = c.heads;
        let mut n = c.vocab_size * d + c.max_seq_len * d + d * c.vocab_size;
        for (i, k) in c.layer_pattern.iter().enumerate() {
            n += 2 * d * c.mlp_hidden + c.mlp_hidden + d;
            match k {
                LayerKind::Gdn => {
                    n += 2 * d * h * c.key_dim + 2 * d * h * c.value_dim + 2 * (d * h + h)
                }
                LayerKind::Ssd => {
                    n += 2 * d * h * c.state_dim + 2 * d * h * c.value_dim + d * h + h
                }
                LayerKind::Attn => {}
            }
            if c.layer_has_attention(i) {
                n += 4 * d * d;
            }
        }
        n
    }

    #[test]
    fn param_count_matches_analytic() {
        let mut configs = vec![
            ModelConfig::default(),
            ModelConfig::interleaved(4, 32, 2, 8),
        ];
        let mut mixed = ModelConfig::interleaved(4, 32, 4, 8).with_pattern(vec![
            LayerKind::Ssd,
            LayerKind::Gdn,
            LayerKind::Attn,
            LayerKind::Ssd,
        ]);
        configs.push(mixed.clone());
        mixed.topology = crate::model::Topology::Parallel;
        configs.push(mixed);
        for c in configs {
            let m = HybridModel::<f64>::init(c.clone(), 1).unwrap();
            assert_eq!(m.param_count(), analytic_count(&c), "{c:?}");
            assert_eq!(m.layout().param_count(), analytic_count(&c));
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let c = ModelConfig::interleaved(4, 32, 2, 8);
        let a = HybridModel::<f64>::init(c.clone(), 5).unwrap();
        let b = HybridModel::<f64>::init(c.clone(), 5).unwrap();
        let other = HybridModel::<f64>::init(c, 6).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x == y));
        assert!(a.params().iter().zip(other.params()).any(|(x, y)| x != y));
        assert_ne!(a.checksum(), other.checksum());
    }

    #[test]
    fn frozen_model_refuses_mutation() {
        let mut m = HybridModel::<f64>::init(ModelConfig::interleaved(4, 32, 2, 8), 0).unwrap();
        m.freeze();
        assert!(m.params_mut().is_err());
        assert!(m.set_param("lm_head", Tensor::zeros(&[32, 64])).is_err());
    }

    #[test]
    fn init_std_is_roughly_point_zero_two() {
        let m = HybridModel::<f64>::init(ModelConfig::default(), 3).unwrap();
        let (_, w) = m.named_params().find(|(n, _)| *n == "lm_head").unwrap();
        let var = w.sum_squares() / w.numel() as f64;
        assert!((var.sqrt() - INIT_STD).abs() < 0.002);
    }
}
