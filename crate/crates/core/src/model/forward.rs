//! The single forward path, built on the gradient graph.
//!
//! Training, evaluation and generation all run through [`forward_graph`];
//! evaluation simply binds every tensor as a constant.

use std::collections::BTreeMap;

use crate::error::{contract, Error, Result};
use crate::model::weights::{AttentionLayout, HybridModel, RecurrentLayout};
use crate::numerics::{Graph, Tensor, Var};
use crate::recurrence::{GateSignals, GdnHeadGates, RecurrentKind, RecurrentState, SsdHeadGates};
use crate::scalar::Scalar;
use crate::tuning::AdaptationBundle;

pub type Token = usize;

/// Graph handles for the active adaptation, indexed by layer.
#[derive(Debug, Clone)]
pub struct BoundAdapters {
    /// Initial recurrent state `[heads, rows, cols]`, already scaled by alpha.
    pub initial: Vec<Option<Var>>,
    /// Per-step state offset `[heads, rows, cols]`.
    pub offsets: Vec<Option<Var>>,
    /// LoRA `(A, B)` per projection in q, k, v, o order.
    pub lora: Vec<[Option<(Var, Var)>; 4]>,
    pub lora_scale: f64,
    /// Prefix `(keys, values)`, each `n_virtual × d_model`.
    pub prefix: Vec<Option<(Var, Var)>>,
}

impl BoundAdapters {
    pub fn empty(n_layers: usize) -> Self {
        Self {
            initial: vec![None; n_layers],
            offsets: vec![None; n_layers],
            lora: vec![[None; 4]; n_layers],
            lora_scale: 0.0,
            prefix: vec![None; n_layers],
        }
    }

    /// Places `bundle` on the graph. With `trainable` the bundle tensors become
    /// gradient leaves. Leaves are returned in [`AdaptationBundle::tensors`] order.
    pub fn bind<T: Scalar>(
        g: &mut Graph<T>,
        model: &HybridModel<T>,
        bundle: &AdaptationBundle<T>,
        trainable: bool,
    ) -> Result<(Self, Vec<Var>)> {
        let config = model.config();
        bundle.validate(config)?;
        let mut out = Self::empty(config.n_layers);
        let mut leaves = Vec::new();
        let mut leaf = |g: &mut Graph<T>, t: &Tensor<T>| {
            let v = if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            };
            leaves.push(v);
            v
        };
        if let Some(bank) = &bundle.state {
            for (&l, s) in &bank.states {
                let v = leaf(g, s);
                out.initial[l] = Some(g.scale(v, T::of(bank.alpha)));
            }
        }
        if let Some(bank) = &bundle.offset {
            for (&l, s) in &bank.offsets {
                out.offsets[l] = Some(leaf(g, s));
            }
        }
        if let Some(lora) = &bundle.lora {
            out.lora_scale = lora.scaling();
            for (&(l, t), p) in &lora.pairs {
                let a = leaf(g, &p.a);
                let b = leaf(g, &p.b);
                out.lora[l][t.index()] = Some((a, b));
            }
        }
        if let Some(prefix) = &bundle.prefix {
            for (&l, p) in &prefix.layers {
                let k = leaf(g, &p.keys);
                let v = leaf(g, &p.values);
                out.prefix[l] = Some((k, v));
            }
        }
        Ok((out, leaves))
    }
}

/// Gate handles of one head at one step.
#[derive(Debug, Clone, Copy)]
pub struct HeadGateVars {
    /// α (GDN) or Ā (SSD), shape `[1]`.
    pub decay: Var,
    /// β (GDN only), shape `[1]`.
    pub write: Option<Var>,
    /// Unit key (GDN) or B̄ (SSD).
    pub key: Var,
    /// Value (GDN) or x (SSD).
    pub value: Var,
    pub query: Var,
}

#[derive(Debug, Clone)]
pub struct RecurrentTrace {
    pub kind: RecurrentKind,
    /// `states[t][h]`: state after step `t`.
    pub states: Vec<Vec<Var>>,
    /// `gates[t][h]`.
    pub gates: Vec<Vec<HeadGateVars>>,
}

#[derive(Debug, Clone)]
pub struct GraphTrace {
    /// `seq_len × vocab`.
    pub logits: Var,
    /// Residual stream after each block, `seq_len × d_model`.
    pub residuals: Vec<Var>,
    pub recurrent: Vec<Option<RecurrentTrace>>,
}

pub fn check_tokens<T: Scalar>(model: &HybridModel<T>, tokens: &[Token]) -> Result<()> {
    let c = model.config();
    if tokens.is_empty() {
        return contract("empty token sequence");
    }
    if tokens.len() > c.max_seq_len {
        return contract(format!(
            "sequence length {} exceeds max_seq_len {}",
            tokens.len(),
            c.max_seq_len
        ));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= c.vocab_size) {
        return Err(Error::Index(format!(
            "token {t} outside vocabulary of {}",
            c.vocab_size
        )));
    }
    Ok(())
}

/// Backbone weights on the graph, in layout order.
pub fn bind_weights<T: Scalar>(
    g: &mut Graph<T>,
    model: &HybridModel<T>,
    trainable: bool,
) -> Vec<Var> {
    model
        .params()
        .iter()
        .map(|p| {
            if trainable {
                g.param(p.clone())
            } else {
                g.constant(p.clone())
            }
        })
        .collect()
}

pub fn forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    model: &HybridModel<T>,
    w: &[Var],
    tokens: &[Token],
    ad: &BoundAdapters,
) -> Result<GraphTrace> {
    check_tokens(model, tokens)?;
    let layout = model.layout();
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let tok = g.gather(w[layout.tok_emb], tokens)?;
    let pos = g.gather(w[layout.pos_emb], &positions)?;
    let mut x = g.add(tok, pos)?;
    let mut residuals = Vec::with_capacity(layout.blocks.len());
    let mut recurrent = Vec::with_capacity(layout.blocks.len());
    for (layer, block) in layout.blocks.iter().enumerate() {
        let h = g.rms_norm_rows(x)?;
        let mut trace = None;
        if let Some(rl) = &block.recurrent {
            let (out, tr) = recurrent_mixer(g, model, w, rl, h, layer, ad)?;
            x = g.add(x, out)?;
            trace = Some(tr);
        }
        if let Some(al) = &block.attention {
            let out = attention_mixer(g, model, w, al, h, layer, ad)?;
            x = g.add(x, out)?;
        }
        let h2 = g.rms_norm_rows(x)?;
        let up = g.matmul(h2, w[block.mlp.w_in])?;
        let up = g.add_bias(up, w[block.mlp.b_in])?;
        let act = g.silu(up);
        let down = g.matmul(act, w[block.mlp.w_out])?;
        let down = g.add_bias(down, w[block.mlp.b_out])?;
        x = g.add(x, down)?;
        residuals.push(x);
        recurrent.push(trace);
    }
    let hf = g.rms_norm_rows(x)?;
    let logits = g.matmul(hf, w[layout.lm_head])?;
    Ok(GraphTrace {
        logits,
        residuals,
        recurrent,
    })
}

fn recurrent_mixer<T: Scalar>(
    g: &mut Graph<T>,
    model: &HybridModel<T>,
    w: &[Var],
    rl: &RecurrentLayout,
    h: Var,
    layer: usize,
    ad: &BoundAdapters,
) -> Result<(Var, RecurrentTrace)> {
    let c = model.config();
    let seq = g.shape(h)[0];
    let [heads, rows, cols] = c.state_shape(rl.kind);
    let (qw, kw, vw) = match rl.kind {
        RecurrentKind::Gdn => (c.key_dim, c.key_dim, c.value_dim),
        RecurrentKind::Ssd => (c.state_dim, c.state_dim, c.value_dim),
    };
    let q = g.matmul(h, w[rl.w_q])?;
    let k = g.matmul(h, w[rl.w_k])?;
    let v = g.matmul(h, w[rl.w_v])?;
    let a_pre = g.matmul(h, w[rl.w_decay])?;
    let a_pre = g.add_bias(a_pre, w[rl.b_decay])?;
    let decay = g.sigmoid(a_pre);
    let write = match rl.write_gate {
        Some((wb, bb)) => {
            let b_pre = g.matmul(h, w[wb])?;
            let b_pre = g.add_bias(b_pre, w[bb])?;
            Some(g.sigmoid(b_pre))
        }
        None => None,
    };

    let mut states = vec![Vec::with_capacity(heads); seq];
    let mut gates = vec![Vec::with_capacity(heads); seq];
    let mut head_outs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let q_h = g.slice_cols(q, hd * qw, qw)?;
        let k_h = g.slice_cols(k, hd * kw, kw)?;
        let v_h = g.slice_cols(v, hd * vw, vw)?;
        let a_h = g.slice_cols(decay, hd, 1)?;
        let b_h = match write {
            Some(b) => Some(g.slice_cols(b, hd, 1)?),
            None => None,
        };
        let mut s = match ad.initial[layer] {
            Some(init) => g.index0(init, hd)?,
            None => g.constant(Tensor::zeros(&[rows, cols])),
        };
        let off = match ad.offsets[layer] {
            Some(o) => Some(g.index0(o, hd)?),
            None => None,
        };
        let mut ys = Vec::with_capacity(seq);
        for t in 0..seq {
            let a_t = g.index0(a_h, t)?;
            let q_t = g.index0(q_h, t)?;
            let raw_k = g.index0(k_h, t)?;
            let v_t = g.index0(v_h, t)?;
            let (key, beta) = match rl.kind {
                RecurrentKind::Gdn => {
                    let k_t = g.normalize(raw_k)?;
                    let b_t = g.index0(b_h.expect("GDN has a write gate"), t)?;
                    let sk = g.matvec(s, k_t)?;
                    let erase = g.outer(sk, k_t)?;
                    let erase = g.scale_by(erase, b_t)?;
                    let kept = g.sub(s, erase)?;
                    let kept = g.scale_by(kept, a_t)?;
                    let wr = g.outer(v_t, k_t)?;
                    let wr = g.scale_by(wr, b_t)?;
                    s = g.add(kept, wr)?;
                    (k_t, Some(b_t))
                }
                RecurrentKind::Ssd => {
                    let kept = g.scale_by(s, a_t)?;
                    let wr = g.outer(raw_k, v_t)?;
                    s = g.add(kept, wr)?;
                    (raw_k, None)
                }
            };
            if let Some(o) = off {
                s = g.add(s, o)?;
            }
            let y = match rl.kind {
                RecurrentKind::Gdn => g.matvec(s, q_t)?,
                RecurrentKind::Ssd => g.mat_t_vec(s, q_t)?,
            };
            ys.push(y);
            states[t].push(s);
            gates[t].push(HeadGateVars {
                decay: a_t,
                write: beta,
                key,
                value: v_t,
                query: q_t,
            });
        }
        head_outs.push(g.stack(&ys)?);
    }
    let y = g.concat_cols(&head_outs)?;
    let out = g.matmul(y, w[rl.w_o])?;
    Ok((
        out,
        RecurrentTrace {
            kind: rl.kind,
            states,
            gates,
        },
    ))
}

fn projection<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    weight: Var,
    lora: Option<(Var, Var)>,
    scale: f64,
) -> Result<Var> {
    let y = g.matmul(x, weight)?;
    match lora {
        None => Ok(y),
        Some((a, b)) => {
            let xa = g.matmul(x, a)?;
            let xab = g.matmul(xa, b)?;
            let delta = g.scale(xab, T::of(scale));
            g.add(y, delta)
        }
    }
}

fn attention_mixer<T: Scalar>(
    g: &mut Graph<T>,
    model: &HybridModel<T>,
    w: &[Var],
    al: &AttentionLayout,
    h: Var,
    layer: usize,
    ad: &BoundAdapters,
) -> Result<Var> {
    let c = model.config();
    let hd = c.attn_head_dim();
    let inv_sqrt = T::of(1.0 / (hd as f64).sqrt());
    let lora = &ad.lora[layer];
    let q = projection(g, h, w[al.proj[0]], lora[0], ad.lora_scale)?;
    let k = projection(g, h, w[al.proj[1]], lora[1], ad.lora_scale)?;
    let v = projection(g, h, w[al.proj[2]], lora[2], ad.lora_scale)?;
    let mut heads = Vec::with_capacity(c.heads);
    for i in 0..c.heads {
        let q_i = g.slice_cols(q, i * hd, hd)?;
        let k_i = g.slice_cols(k, i * hd, hd)?;
        let v_i = g.slice_cols(v, i * hd, hd)?;
        let scores = g.matmul_t(q_i, k_i)?;
        let scores = g.scale(scores, inv_sqrt);
        let p = g.softmax_rows(scores, true)?;
        let mut o = g.matmul(p, v_i)?;
        if let Some((pk, pv)) = ad.prefix[layer] {
            let pk_i = g.slice_cols(pk, i * hd, hd)?;
            let pv_i = g.slice_cols(pv, i * hd, hd)?;
            let ps = g.matmul_t(q_i, pk_i)?;
            let ps = g.scale(ps, inv_sqrt);
            let pp = g.softmax_rows(ps, false)?;
            let po = g.matmul(pp, pv_i)?;
            o = g.add(o, po)?;
        }
        heads.push(o);
    }
    let o = g.concat_cols(&heads)?;
    projection(g, o, w[al.proj[3]], lora[3], ad.lora_scale)
}

/// Materialized forward results.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `seq_len × vocab`.
    pub logits: Tensor<T>,
    /// Residual stream after each block.
    pub residuals: Vec<Tensor<T>>,
    /// Per recurrent layer, the state after every step.
    pub states: Vec<Option<Vec<RecurrentState<T>>>>,
    /// Per recurrent layer, the gate signals of every step.
    pub gates: Vec<Option<Vec<GateSignals<T>>>>,
}

fn materialize_state<T: Scalar>(
    g: &Graph<T>,
    kind: RecurrentKind,
    heads: &[Var],
) -> Result<RecurrentState<T>> {
    let parts: Vec<Tensor<T>> = heads.iter().map(|&v| g.value(v).clone()).collect();
    RecurrentState::new(kind, Tensor::stack(&parts)?)
}

fn materialize_gates<T: Scalar>(
    g: &Graph<T>,
    kind: RecurrentKind,
    heads: &[HeadGateVars],
) -> GateSignals<T> {
    match kind {
        RecurrentKind::Gdn => GateSignals::Gdn(
            heads
                .iter()
                .map(|h| GdnHeadGates {
                    alpha: g.value(h.decay).item(),
                    beta: g.value(h.write.expect("GDN write gate")).item(),
                    key: g.value(h.key).clone(),
                    value: g.value(h.value).clone(),
                    query: g.value(h.query).clone(),
                })
                .collect(),
        ),
        RecurrentKind::Ssd => GateSignals::Ssd(
            heads
                .iter()
                .map(|h| SsdHeadGates {
                    a_bar: g.value(h.decay).item(),
                    b_bar: g.value(h.key).clone(),
                    x: g.value(h.value).clone(),
                    query: g.value(h.query).clone(),
                })
                .collect(),
        ),
    }
}

impl<T: Scalar> HybridModel<T> {
    /// Logits only.
    pub fn logits(&self, tokens: &[Token], bundle: &AdaptationBundle<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let w = bind_weights(&mut g, self, false);
        let (ad, _) = BoundAdapters::bind(&mut g, self, bundle, false)?;
        let tr = forward_graph(&mut g, self, &w, tokens, &ad)?;
        Ok(g.value(tr.logits).clone())
    }

    /// Logits plus the full per-layer state trajectory.
    pub fn forward(
        &self,
        tokens: &[Token],
        bundle: &AdaptationBundle<T>,
    ) -> Result<ForwardOutput<T>> {
        let mut g = Graph::new();
        let w = bind_weights(&mut g, self, false);
        let (ad, _) = BoundAdapters::bind(&mut g, self, bundle, false)?;
        let tr = forward_graph(&mut g, self, &w, tokens, &ad)?;
        let mut states = Vec::with_capacity(tr.recurrent.len());
        let mut gates = Vec::with_capacity(tr.recurrent.len());
        for rt in &tr.recurrent {
            match rt {
                Some(rt) => {
                    states.push(Some(
                        rt.states
                            .iter()
                            .map(|hs| materialize_state(&g, rt.kind, hs))
                            .collect::<Result<Vec<_>>>()?,
                    ));
                    gates.push(Some(
                        rt.gates
                            .iter()
                            .map(|hs| materialize_gates(&g, rt.kind, hs))
                            .collect(),
                    ));
                }
                None => {
                    states.push(None);
                    gates.push(None);
                }
            }
        }
        Ok(ForwardOutput {
            logits: g.value(tr.logits).clone(),
            residuals: tr.residuals.iter().map(|&r| g.value(r).clone()).collect(),
            states,
            gates,
        })
    }

    /// Forward with recurrent scans seeded directly from the given states,
    /// bypassing any adaptation bundle.
    pub fn logits_from_initial_states(
        &self,
        tokens: &[Token],
        initial: &BTreeMap<usize, RecurrentState<T>>,
    ) -> Result<Tensor<T>> {
        let c = self.config();
        let mut g = Graph::new();
        let w = bind_weights(&mut g, self, false);
        let mut ad = BoundAdapters::empty(c.n_layers);
        for (&l, s) in initial {
            match c.layer_state_shape(l) {
                Some(shape) if s.tensor.shape() == shape => {
                    ad.initial[l] = Some(g.constant(s.tensor.clone()))
                }
                _ => {
                    return contract(format!(
                        "initial state for layer {l} does not fit the model"
                    ))
                }
            }
        }
        let tr = forward_graph(&mut g, self, &w, tokens, &ad)?;
        Ok(g.value(tr.logits).clone())
    }
}
