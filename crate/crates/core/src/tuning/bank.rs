//! Trainable adaptation parameters and the bundle handed to the forward pass.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{contract, shape_err, Result};
use crate::model::ModelConfig;
use crate::numerics::{Prng, Tensor};
use crate::scalar::Scalar;

/// Learned initial states, one `[heads, rows, cols]` tensor per tuned recurrent layer.
///
/// Layers absent from `states` are untuned and behave as exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBank<T> {
    pub alpha: f64,
    pub states: BTreeMap<usize, Tensor<T>>,
}

impl<T: Scalar> StateBank<T> {
    /// All-zero bank over `layers`, which must be recurrent layers of `config`.
    pub fn zeros(config: &ModelConfig, layers: &[usize], alpha: f64) -> Result<Self> {
        let mut states = BTreeMap::new();
        for &l in layers {
            let shape = recurrent_shape(config, l)?;
            states.insert(l, Tensor::zeros(&shape));
        }
        Ok(Self { alpha, states })
    }

    /// Zero bank over every recurrent layer.
    pub fn zeros_all(config: &ModelConfig, alpha: f64) -> Self {
        Self::zeros(config, &config.recurrent_layers(), alpha)
            .expect("recurrent layers have states")
    }

    pub fn layer_mask(&self) -> BTreeSet<usize> {
        self.states.keys().copied().collect()
    }

    /// S0 for `layer`, zeros if the layer is not tuned.
    pub fn state(&self, config: &ModelConfig, layer: usize) -> Result<Tensor<T>> {
        match self.states.get(&layer) {
            Some(t) => Ok(t.clone()),
            None => Ok(Tensor::zeros(&recurrent_shape(config, layer)?)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.states.values().map(Tensor::numel).sum()
    }

    pub fn square_norm(&self) -> T {
        self.states.values().map(Tensor::sum_squares).sum()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return contract(format!(
                "state bank alpha must be positive, got {}",
                self.alpha
            ));
        }
        check_layer_shapes(config, &self.states, "state bank")
    }

    pub fn cast<U: Scalar>(&self) -> StateBank<U> {
        StateBank {
            alpha: self.alpha,
            states: self.states.iter().map(|(&l, t)| (l, t.cast())).collect(),
        }
    }
}

/// Per-step additive state offsets ΔS, one tensor per tuned recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetBank<T> {
    pub offsets: BTreeMap<usize, Tensor<T>>,
}

impl<T: Scalar> OffsetBank<T> {
    pub fn zeros(config: &ModelConfig, layers: &[usize]) -> Result<Self> {
        let mut offsets = BTreeMap::new();
        for &l in layers {
            offsets.insert(l, Tensor::zeros(&recurrent_shape(config, l)?));
        }
        Ok(Self { offsets })
    }

    pub fn param_count(&self) -> usize {
        self.offsets.values().map(Tensor::numel).sum()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        check_layer_shapes(config, &self.offsets, "offset bank")
    }
}

/// Attention projection adapted by LoRA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoraTarget {
    Q,
    K,
    V,
    O,
}

impl LoraTarget {
    pub const ALL: [LoraTarget; 4] = [LoraTarget::Q, LoraTarget::K, LoraTarget::V, LoraTarget::O];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Low-rank factors for one projection. The projection weight `W` (`d × d`,
/// applied as `x W`) becomes `W + (lora_alpha / r) · A B`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair<T> {
    /// `d × r`, Gaussian init.
    pub a: Tensor<T>,
    /// `r × d`, zero init.
    pub b: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapters<T> {
    pub rank: usize,
    pub lora_alpha: f64,
    pub pairs: BTreeMap<(usize, LoraTarget), LoraPair<T>>,
}

impl<T: Scalar> LoraAdapters<T> {
    /// Fresh adapters on every attention layer for `targets`, with `lora_alpha = 2r`.
    pub fn init(
        config: &ModelConfig,
        rank: usize,
        targets: &[LoraTarget],
        rng: &mut Prng,
    ) -> Result<Self> {
        if rank == 0 {
            return contract("LoRA rank must be at least 1");
        }
        let d = config.d_model;
        let std = 1.0 / (d as f64).sqrt();
        let mut pairs = BTreeMap::new();
        for layer in config.attention_layers() {
            for &t in targets {
                let a = Tensor::randn(&[d, rank], std, rng);
                pairs.insert(
                    (layer, t),
                    LoraPair {
                        a,
                        b: Tensor::zeros(&[rank, d]),
                    },
                );
            }
        }
        Ok(Self {
            rank,
            lora_alpha: 2.0 * rank as f64,
            pairs,
        })
    }

    pub fn scaling(&self) -> f64 {
        self.lora_alpha / self.rank as f64
    }

    pub fn param_count(&self) -> usize {
        self.pairs.values().map(|p| p.a.numel() + p.b.numel()).sum()
    }

    /// Dense weight delta `(lora_alpha / r) · A B` for one projection.
    pub fn delta(&self, layer: usize, target: LoraTarget) -> Option<Result<Tensor<T>>> {
        let p = self.pairs.get(&(layer, target))?;
        Some(p.a.matmul(&p.b).map(|ab| ab.scale(T::of(self.scaling()))))
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let d = config.d_model;
        for (&(layer, t), p) in &self.pairs {
            if layer >= config.n_layers || !config.layer_has_attention(layer) {
                return contract(format!(
                    "LoRA adapter on layer {layer} which has no attention"
                ));
            }
            if p.a.shape() != [d, self.rank] || p.b.shape() != [self.rank, d] {
                return shape_err(format!(
                    "LoRA {t:?} on layer {layer}: A {:?}, B {:?}, expected [{d}, {r}] and [{r}, {d}]",
                    p.a.shape(),
                    p.b.shape(),
                    r = self.rank
                ));
            }
        }
        Ok(())
    }
}

/// Learned virtual key/value rows for one attention layer, each `n_virtual × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixPair<T> {
    pub keys: Tensor<T>,
    pub values: Tensor<T>,
}

/// Prefix key/values for attention layers.
///
/// Each query attends to the prefix rows through its own softmax, and the
/// result is added to the ordinary causal attention output. Zero values
/// therefore leave the model unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixParams<T> {
    pub n_virtual: usize,
    pub layers: BTreeMap<usize, PrefixPair<T>>,
}

impl<T: Scalar> PrefixParams<T> {
    /// Gaussian keys and zero values on every attention layer.
    pub fn init(config: &ModelConfig, n_virtual: usize, rng: &mut Prng) -> Result<Self> {
        if n_virtual == 0 {
            return contract("prefix needs at least one virtual position");
        }
        let layers = config.attention_layers();
        if layers.is_empty() {
            return contract("prefix tuning needs at least one attention layer");
        }
        let d = config.d_model;
        let layers = layers
            .into_iter()
            .map(|l| {
                let keys = Tensor::randn(&[n_virtual, d], 1.0, rng);
                (
                    l,
                    PrefixPair {
                        keys,
                        values: Tensor::zeros(&[n_virtual, d]),
                    },
                )
            })
            .collect();
        Ok(Self { n_virtual, layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .values()
            .map(|p| p.keys.numel() + p.values.numel())
            .sum()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.n_virtual == 0 {
            return contract("prefix needs at least one virtual position");
        }
        let want = [self.n_virtual, config.d_model];
        for (&layer, p) in &self.layers {
            if layer >= config.n_layers || !config.layer_has_attention(layer) {
                return contract(format!("prefix on layer {layer} which has no attention"));
            }
            if p.keys.shape() != want || p.values.shape() != want {
                return shape_err(format!("prefix on layer {layer} must be {want:?}"));
            }
        }
        Ok(())
    }
}

/// Adaptation method names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    S0,
    Offset,
    Lora,
    Prefix,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::S0 => "s0",
            Method::Offset => "offset",
            Method::Lora => "lora",
            Method::Prefix => "prefix",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s0" => Ok(Method::S0),
            "offset" => Ok(Method::Offset),
            "lora" => Ok(Method::Lora),
            "prefix" => Ok(Method::Prefix),
            other => Err(crate::Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// At most one adaptation applied to a frozen model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationBundle<T> {
    pub state: Option<StateBank<T>>,
    pub offset: Option<OffsetBank<T>>,
    pub lora: Option<LoraAdapters<T>>,
    pub prefix: Option<PrefixParams<T>>,
}

impl<T> Default for AdaptationBundle<T> {
    fn default() -> Self {
        Self {
            state: None,
            offset: None,
            lora: None,
            prefix: None,
        }
    }
}

impl<T: Scalar> AdaptationBundle<T> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_state(bank: StateBank<T>) -> Self {
        Self {
            state: Some(bank),
            ..Self::default()
        }
    }

    pub fn with_offset(bank: OffsetBank<T>) -> Self {
        Self {
            offset: Some(bank),
            ..Self::default()
        }
    }

    pub fn with_lora(adapters: LoraAdapters<T>) -> Self {
        Self {
            lora: Some(adapters),
            ..Self::default()
        }
    }

    pub fn with_prefix(prefix: PrefixParams<T>) -> Self {
        Self {
            prefix: Some(prefix),
            ..Self::default()
        }
    }

    pub fn active(&self) -> Option<Method> {
        [
            (self.state.is_some(), Method::S0),
            (self.offset.is_some(), Method::Offset),
            (self.lora.is_some(), Method::Lora),
            (self.prefix.is_some(), Method::Prefix),
        ]
        .into_iter()
        .find_map(|(on, m)| on.then_some(m))
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let active = [
            self.state.is_some(),
            self.offset.is_some(),
            self.lora.is_some(),
            self.prefix.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if active > 1 {
            return contract(format!(
                "{active} adaptations active; at most one is allowed"
            ));
        }
        if let Some(b) = &self.state {
            b.validate(config)?;
        }
        if let Some(b) = &self.offset {
            b.validate(config)?;
        }
        if let Some(b) = &self.lora {
            b.validate(config)?;
        }
        if let Some(b) = &self.prefix {
            b.validate(config)?;
        }
        Ok(())
    }

    /// Trainable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        if let Some(b) = &self.state {
            out.extend(b.states.values());
        }
        if let Some(b) = &self.offset {
            out.extend(b.offsets.values());
        }
        if let Some(b) = &self.lora {
            for p in b.pairs.values() {
                out.push(&p.a);
                out.push(&p.b);
            }
        }
        if let Some(b) = &self.prefix {
            for p in b.layers.values() {
                out.push(&p.keys);
                out.push(&p.values);
            }
        }
        out
    }

    /// Mutable view in the order of [`AdaptationBundle::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        if let Some(b) = &mut self.state {
            out.extend(b.states.values_mut());
        }
        if let Some(b) = &mut self.offset {
            out.extend(b.offsets.values_mut());
        }
        if let Some(b) = &mut self.lora {
            for p in b.pairs.values_mut() {
                out.push(&mut p.a);
                out.push(&mut p.b);
            }
        }
        if let Some(b) = &mut self.prefix {
            for p in b.layers.values_mut() {
                out.push(&mut p.keys);
                out.push(&mut p.values);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Sum of squares over all trainable tensors.
    pub fn square_norm(&self) -> T {
        self.tensors().iter().map(|t| t.sum_squares()).sum()
    }
}

pub(crate) fn recurrent_shape(config: &ModelConfig, layer: usize) -> Result<[usize; 3]> {
    config
        .layer_state_shape(layer)
        .ok_or_else(|| crate::Error::Contract(format!("layer {layer} is not a recurrent layer")))
}

/// Element count of one recurrent layer's state.
pub fn recurrent_state_numel(config: &ModelConfig, layer: usize) -> Result<usize> {
    Ok(recurrent_shape(config, layer)?.iter().product())
}

fn check_layer_shapes<T: Scalar>(
    config: &ModelConfig,
    map: &BTreeMap<usize, Tensor<T>>,
    what: &str,
) -> Result<()> {
    for (&l, t) in map {
        let shape = recurrent_shape(config, l)?;
        if t.shape() != shape {
            return shape_err(format!(
                "{what} layer {l}: shape {:?}, expected {shape:?}",
                t.shape()
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_s0_matches_lora_rank_three() {
        let c = ModelConfig::default();
        let bank = StateBank::<f64>::zeros_all(&c, 0.07);
        assert_eq!(bank.param_count(), 6 * 2 * 16 * 16);
        let lora = LoraAdapters::<f64>::init(&c, 3, &LoraTarget::ALL, &mut Prng::new(0)).unwrap();
        assert_eq!(lora.param_count(), 2 * 64 * 3 * 4 * 2);
        assert_eq!(lora.param_count(), bank.param_count());
    }

    #[test]
    fn bundle_rejects_two_active() {
        let c = ModelConfig::default();
        let mut b = AdaptationBundle::with_state(StateBank::<f64>::zeros_all(&c, 0.07));
        b.offset = Some(OffsetBank::zeros(&c, &[0]).unwrap());
        assert!(matches!(b.validate(&c), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn bank_on_attention_layer_rejected() {
        let c = ModelConfig::default();
        assert!(StateBank::<f64>::zeros(&c, &[3], 0.07).is_err());
    }

    #[test]
    fn untuned_layer_reads_as_zero() {
        let c = ModelConfig::default();
        let bank = StateBank::<f64>::zeros(&c, &[0], 0.07).unwrap();
        assert_eq!(bank.state(&c, 5).unwrap(), Tensor::zeros(&[2, 16, 16]));
        assert_eq!(bank.layer_mask().into_iter().collect::<Vec<_>>(), vec![0]);
    }
}
