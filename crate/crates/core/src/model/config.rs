use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recurrence::RecurrentKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "GDN")]
    Gdn,
    #[serde(rename = "SSD")]
    Ssd,
    #[serde(rename = "ATTN")]
    Attn,
}

impl LayerKind {
    pub fn recurrent(self) -> Option<RecurrentKind> {
        match self {
            LayerKind::Gdn => Some(RecurrentKind::Gdn),
            LayerKind::Ssd => Some(RecurrentKind::Ssd),
            LayerKind::Attn => None,
        }
    }
}

/// How attention is combined with recurrent mixers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Each layer is either recurrent or attention, following `layer_pattern`.
    #[default]
    Interleaved,
    /// Every recurrent layer also runs an attention branch in parallel, and the
    /// two outputs are summed into the residual stream.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub layer_pattern: Vec<LayerKind>,
    /// Heads of both the recurrent mixers and attention.
    pub heads: usize,
    /// GDN key width per head.
    pub key_dim: usize,
    /// GDN value width per head; also the SSD channel width per head.
    pub value_dim: usize,
    /// SSD state width per head.
    pub state_dim: usize,
    pub mlp_hidden: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub topology: Topology,
    /// Initial bias of the decay gates (sigmoid logit).
    pub decay_bias_init: f64,
}

impl Default for ModelConfig {
    /// vocab 64, d_model 64, eight layers `GDN GDN GDN ATTN ×2`, two heads, key/value width 16.
    fn default() -> Self {
        Self::interleaved(8, 64, 2, 16)
    }
}

impl ModelConfig {
    /// Repeating `GDN GDN GDN ATTN` pattern with `n_layers` layers.
    pub fn interleaved(n_layers: usize, d_model: usize, heads: usize, head_dim: usize) -> Self {
        let layer_pattern = (0..n_layers)
            .map(|i| {
                if i % 4 == 3 {
                    LayerKind::Attn
                } else {
                    LayerKind::Gdn
                }
            })
            .collect();
        Self {
            vocab_size: 64,
            d_model,
            n_layers,
            layer_pattern,
            heads,
            key_dim: head_dim,
            value_dim: head_dim,
            state_dim: 8,
            mlp_hidden: 2 * d_model,
            max_seq_len: 24,
            topology: Topology::Interleaved,
            decay_bias_init: 2.0,
        }
    }

    pub fn with_pattern(mut self, pattern: Vec<LayerKind>) -> Self {
        self.n_layers = pattern.len();
        self.layer_pattern = pattern;
        self
    }

    /// Every layer replaced by attention.
    pub fn pure_attention(&self) -> Self {
        self.clone()
            .with_pattern(vec![LayerKind::Attn; self.n_layers])
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layer_pattern.len() != self.n_layers {
            return fail(format!(
                "layer_pattern has {} entries but n_layers = {}",
                self.layer_pattern.len(),
                self.n_layers
            ));
        }
        if self.n_layers == 0 {
            return fail("n_layers must be positive".into());
        }
        if self.vocab_size < 2 || self.d_model == 0 || self.heads == 0 || self.mlp_hidden == 0 {
            return fail("vocab_size ≥ 2 and positive d_model, heads, mlp_hidden required".into());
        }
        if self.key_dim == 0 || self.value_dim == 0 || self.state_dim == 0 || self.max_seq_len == 0
        {
            return fail("head widths and max_seq_len must be positive".into());
        }
        if self.has_attention() && self.d_model % self.heads != 0 {
            return fail(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        Ok(())
    }

    pub fn recurrent_layers(&self) -> Vec<usize> {
        (0..self.n_layers)
            .filter(|&i| self.layer_pattern[i].recurrent().is_some())
            .collect()
    }

    pub fn has_attention(&self) -> bool {
        (0..self.n_layers).any(|i| self.layer_has_attention(i))
    }

    pub fn layer_has_attention(&self, layer: usize) -> bool {
        match self.layer_pattern[layer] {
            LayerKind::Attn => true,
            _ => self.topology == Topology::Parallel,
        }
    }

    pub fn attention_layers(&self) -> Vec<usize> {
        (0..self.n_layers)
            .filter(|&i| self.layer_has_attention(i))
            .collect()
    }

    /// Shape `[heads, rows, cols]` of a recurrent layer's state.
    pub fn state_shape(&self, kind: RecurrentKind) -> [usize; 3] {
        match kind {
            RecurrentKind::Gdn => [self.heads, self.value_dim, self.key_dim],
            RecurrentKind::Ssd => [self.heads, self.state_dim, self.value_dim],
        }
    }

    pub fn layer_state_shape(&self, layer: usize) -> Option<[usize; 3]> {
        self.layer_pattern
            .get(layer)?
            .recurrent()
            .map(|k| self.state_shape(k))
    }

    pub fn attn_head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}
