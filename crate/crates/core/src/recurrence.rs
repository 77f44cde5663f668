//! Gated-delta-rule and SSD recurrences, evaluated eagerly.
//!
//! The model runs the same updates on the gradient graph; these functions are
//! the reference semantics and the basis of the decay-law analysis.
//!
//! State layout per head:
//! * GDN: `value_dim × key_dim`, updated as `S ← α S (I − β k kᵀ) + β v kᵀ`, read as `S q`.
//! * SSD: `state_dim × channel_dim`, updated as `S ← Ā S + B̄ xᵀ`, read as `Sᵀ c`.

use serde::{Deserialize, Serialize};

use crate::error::{contract, shape_err, Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecurrentKind {
    #[serde(rename = "GDN")]
    Gdn,
    #[serde(rename = "SSD")]
    Ssd,
}

/// Matrix state of one recurrent layer, shape `heads × rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub kind: RecurrentKind,
    pub tensor: Tensor<T>,
}

impl<T: Scalar> RecurrentState<T> {
    /// The default all-zero initial state.
    pub fn zeros(kind: RecurrentKind, heads: usize, rows: usize, cols: usize) -> Self {
        Self {
            kind,
            tensor: Tensor::zeros(&[heads, rows, cols]),
        }
    }

    pub fn new(kind: RecurrentKind, tensor: Tensor<T>) -> Result<Self> {
        if tensor.rank() != 3 {
            return shape_err(format!(
                "recurrent state must be rank 3, got {:?}",
                tensor.shape()
            ));
        }
        Ok(Self { kind, tensor })
    }

    pub fn heads(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn head(&self, h: usize) -> Tensor<T> {
        self.tensor.index0(h).expect("head index in range")
    }

    fn from_heads(kind: RecurrentKind, heads: Vec<Tensor<T>>) -> Result<Self> {
        Self::new(kind, Tensor::stack(&heads)?)
    }
}

/// Gate signals of one GDN head at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GdnHeadGates<T> {
    /// Decay gate α in (0, 1).
    pub alpha: T,
    /// Write strength β in (0, 1).
    pub beta: T,
    /// Unit-norm key.
    pub key: Tensor<T>,
    pub value: Tensor<T>,
    pub query: Tensor<T>,
}

/// Gate signals of one SSD head at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdHeadGates<T> {
    /// Scalar gate Ā in (0, 1).
    pub a_bar: T,
    /// Input projection B̄ (length `state_dim`).
    pub b_bar: Tensor<T>,
    /// Channel input x (length `channel_dim`).
    pub x: Tensor<T>,
    /// Read vector (length `state_dim`).
    pub query: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateSignals<T> {
    Gdn(Vec<GdnHeadGates<T>>),
    Ssd(Vec<SsdHeadGates<T>>),
}

impl<T: Scalar> GateSignals<T> {
    pub fn kind(&self) -> RecurrentKind {
        match self {
            GateSignals::Gdn(_) => RecurrentKind::Gdn,
            GateSignals::Ssd(_) => RecurrentKind::Ssd,
        }
    }

    pub fn heads(&self) -> usize {
        match self {
            GateSignals::Gdn(h) => h.len(),
            GateSignals::Ssd(h) => h.len(),
        }
    }

    /// Same gates with the write input (`v` for GDN, `x` for SSD) set to zero.
    pub fn without_writes(&self) -> Self {
        match self {
            GateSignals::Gdn(hs) => GateSignals::Gdn(
                hs.iter()
                    .map(|h| GdnHeadGates {
                        value: Tensor::zeros(h.value.shape()),
                        ..h.clone()
                    })
                    .collect(),
            ),
            GateSignals::Ssd(hs) => GateSignals::Ssd(
                hs.iter()
                    .map(|h| SsdHeadGates {
                        x: Tensor::zeros(h.x.shape()),
                        ..h.clone()
                    })
                    .collect(),
            ),
        }
    }
}

fn check_open_unit<T: Scalar>(name: &str, x: T) -> Result<()> {
    if x > T::zero() && x < T::one() {
        Ok(())
    } else {
        contract(format!("gate {name} = {x} outside (0, 1)"))
    }
}

fn check_state<T: Scalar>(s: &RecurrentState<T>, g: &GateSignals<T>) -> Result<()> {
    if s.kind != g.kind() {
        return contract(format!(
            "state kind {:?} does not match gate kind {:?}",
            s.kind,
            g.kind()
        ));
    }
    if s.heads() != g.heads() {
        return shape_err(format!(
            "state has {} heads, gates have {}",
            s.heads(),
            g.heads()
        ));
    }
    Ok(())
}

/// One GDN head update: `α (S − β (S k) kᵀ) + β v kᵀ`.
pub fn gdn_head_step<T: Scalar>(s: &Tensor<T>, g: &GdnHeadGates<T>) -> Result<Tensor<T>> {
    let sk = s.matvec(&g.key)?;
    let erased = s.sub(&Tensor::outer(&sk, &g.key)?.scale(g.beta))?;
    let write = Tensor::outer(&g.value, &g.key)?.scale(g.beta);
    erased.scale(g.alpha).add(&write)
}

/// One SSD head update: `Ā S + B̄ xᵀ`.
pub fn ssd_head_step<T: Scalar>(s: &Tensor<T>, g: &SsdHeadGates<T>) -> Result<Tensor<T>> {
    s.scale(g.a_bar).add(&Tensor::outer(&g.b_bar, &g.x)?)
}

pub fn gdn_step<T: Scalar>(
    prev: &RecurrentState<T>,
    gates: &GateSignals<T>,
) -> Result<RecurrentState<T>> {
    check_state(prev, gates)?;
    let GateSignals::Gdn(heads) = gates else {
        unreachable!()
    };
    let mut out = Vec::with_capacity(heads.len());
    for (h, g) in heads.iter().enumerate() {
        check_open_unit("alpha", g.alpha)?;
        check_open_unit("beta", g.beta)?;
        let kn = g.key.norm();
        if (kn - T::one()).abs() > T::of(1e-6) {
            return contract(format!(
                "GDN key for head {h} has norm {kn}, expected unit norm"
            ));
        }
        out.push(gdn_head_step(&prev.head(h), g)?);
    }
    RecurrentState::from_heads(RecurrentKind::Gdn, out)
}

pub fn ssd_step<T: Scalar>(
    prev: &RecurrentState<T>,
    gates: &GateSignals<T>,
) -> Result<RecurrentState<T>> {
    check_state(prev, gates)?;
    let GateSignals::Ssd(heads) = gates else {
        unreachable!()
    };
    let mut out = Vec::with_capacity(heads.len());
    for (h, g) in heads.iter().enumerate() {
        check_open_unit("a_bar", g.a_bar)?;
        out.push(ssd_head_step(&prev.head(h), g)?);
    }
    RecurrentState::from_heads(RecurrentKind::Ssd, out)
}

/// Dispatches to the step matching the state kind.
pub fn step<T: Scalar>(
    prev: &RecurrentState<T>,
    gates: &GateSignals<T>,
) -> Result<RecurrentState<T>> {
    match prev.kind {
        RecurrentKind::Gdn => gdn_step(prev, gates),
        RecurrentKind::Ssd => ssd_step(prev, gates),
    }
}

/// Per-head readout of a state: `S q` (GDN) or `Sᵀ q` (SSD).
pub fn readout<T: Scalar>(
    state: &RecurrentState<T>,
    gates: &GateSignals<T>,
) -> Result<Vec<Tensor<T>>> {
    check_state(state, gates)?;
    match gates {
        GateSignals::Gdn(hs) => hs
            .iter()
            .enumerate()
            .map(|(h, g)| state.head(h).matvec(&g.query))
            .collect(),
        GateSignals::Ssd(hs) => hs
            .iter()
            .enumerate()
            .map(|(h, g)| state.head(h).mat_t_vec(&g.query))
            .collect(),
    }
}

/// Output of [`scan`].
#[derive(Debug, Clone)]
pub struct ScanOutput<T> {
    pub final_state: RecurrentState<T>,
    /// `readouts[t][h]` is head `h`'s read at step `t`.
    pub readouts: Vec<Vec<Tensor<T>>>,
    pub states: Vec<RecurrentState<T>>,
}

/// Runs the layer recurrence from `initial` over every step of `gates`.
pub fn scan<T: Scalar>(
    initial: &RecurrentState<T>,
    gates: &[GateSignals<T>],
) -> Result<ScanOutput<T>> {
    if gates.is_empty() {
        return contract("scan needs at least one step of gates");
    }
    let mut state = initial.clone();
    let mut readouts = Vec::with_capacity(gates.len());
    let mut states = Vec::with_capacity(gates.len());
    for g in gates {
        state = step(&state, g)?;
        readouts.push(readout(&state, g)?);
        states.push(state.clone());
    }
    Ok(ScanOutput {
        final_state: state,
        readouts,
        states,
    })
}

/// Per-head product of the gating matrices `G_1 G_2 ⋯ G_T`.
///
/// For GDN `G_t = α_t (I − β_t k_t k_tᵀ)`; for SSD `G_t = Ā_t I`. With the write
/// inputs removed, the final state of a scan from `S0` is `S0 · G_1 ⋯ G_T` per head.
pub fn decay_product<T: Scalar>(gates: &[GateSignals<T>]) -> Result<Vec<Tensor<T>>> {
    let first = gates
        .first()
        .ok_or_else(|| Error::Contract("decay_product needs gates".into()))?;
    let heads = first.heads();
    let mut products: Vec<Option<Tensor<T>>> = vec![None; heads];
    for g in gates {
        if g.kind() != first.kind() || g.heads() != heads {
            return contract("gate kinds or head counts change within the sequence");
        }
        for (h, prod) in products.iter_mut().enumerate() {
            let gm = gating_matrix(g, h)?;
            *prod = Some(match prod.take() {
                None => gm,
                Some(p) => p.matmul(&gm)?,
            });
        }
    }
    Ok(products.into_iter().map(Option::unwrap).collect())
}

/// `G_t` for a single head.
pub fn gating_matrix<T: Scalar>(g: &GateSignals<T>, head: usize) -> Result<Tensor<T>> {
    match g {
        GateSignals::Gdn(hs) => {
            let hg = &hs[head];
            let d = hg.key.numel();
            let kk = Tensor::outer(&hg.key, &hg.key)?.scale(hg.beta);
            Ok(Tensor::identity(d).sub(&kk)?.scale(hg.alpha))
        }
        GateSignals::Ssd(hs) => {
            let hg = &hs[head];
            Ok(Tensor::identity(hg.x.numel()).scale(hg.a_bar))
        }
    }
}

/// Applies per-head right factors: `S0[h] · factors[h]`.
pub fn apply_right<T: Scalar>(
    s0: &RecurrentState<T>,
    factors: &[Tensor<T>],
) -> Result<RecurrentState<T>> {
    let heads = (0..s0.heads())
        .map(|h| s0.head(h).matmul(&factors[h]))
        .collect::<Result<Vec<_>>>()?;
    RecurrentState::from_heads(s0.kind, heads)
}
