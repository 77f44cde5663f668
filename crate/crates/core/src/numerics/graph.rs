//! Tape-based reverse-mode differentiation over tensors.
//!
//! A [`Graph`] records every operation in evaluation order. Leaves are created
//! with [`Graph::param`] (gradient requested) or [`Graph::constant`] (frozen).
//! [`Graph::backward`] walks the tape once in reverse and returns a gradient for
//! every parameter leaf; nodes that do not depend on any parameter never
//! allocate gradient storage.

use std::sync::Arc;

use crate::error::{contract, shape_err, Error, Result};
use crate::numerics::tensor::{matmul_into, Tensor};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Outer(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    Sigmoid(Var),
    Silu(Var),
    RmsNormRows(Var),
    Normalize(Var),
    SoftmaxRows(Var),
    Index0(Var, usize),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Stack(Vec<Var>),
    Reshape(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
    },
    Sum(Var),
    SumSquares(Var),
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of parameter leaves, indexed by their [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<(Var, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.iter().find(|(k, _)| *k == v).map(|(_, g)| g)
    }

    pub fn wrt(&self, v: Var) -> &Tensor<T> {
        self.get(v).expect("no gradient recorded for this leaf")
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.grads.iter().map(|(v, g)| (*v, g))
    }
}

pub const RMS_EPS: f64 = 1e-6;
pub const NORMALIZE_EPS: f64 = 1e-12;

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is requested by [`Graph::backward`].
    pub fn param(&mut self, value: impl Into<Arc<Tensor<T>>>) -> Var {
        self.nodes.push(Node {
            value: value.into(),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push(v);
        v
    }

    /// Frozen leaf: never receives gradient storage.
    pub fn constant(&mut self, value: impl Into<Arc<Tensor<T>>>) -> Var {
        self.nodes.push(Node {
            value: value.into(),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that honours the tensor's own `requires_grad` marker.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        if value.requires_grad() {
            self.param(value)
        } else {
            self.constant(value)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols() {
            return shape_err(format!("matmul_t: {:?} by {:?}ᵀ", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ar = &av.data()[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bv.data()[j * k..(j + 1) * k];
                out[i * n + j] = ar.iter().zip(br).map(|(&x, &y)| x * y).sum();
            }
        }
        let out = Tensor::matrix(m, n, out)?;
        Ok(self.push(out, Op::MatMulT(a, b), &[a, b]))
    }

    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let out = self.value(a).matvec(self.value(x))?;
        Ok(self.push(out, Op::MatVec(a, x), &[a, x]))
    }

    /// `aᵀ x`.
    pub fn mat_t_vec(&mut self, a: Var, x: Var) -> Result<Var> {
        let out = self.value(a).mat_t_vec(self.value(x))?;
        Ok(self.push(out, Op::MatTVec(a, x), &[a, x]))
    }

    pub fn outer(&mut self, u: Var, v: Var) -> Result<Var> {
        let out = Tensor::outer(self.value(u), self.value(v))?;
        Ok(self.push(out, Op::Outer(u, v), &[u, v]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the vector `b` to every row of the matrix `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 1 || av.cols() != bv.numel() {
            return shape_err(format!("add_bias: {:?} + {:?}", av.shape(), bv.shape()));
        }
        let c = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv.data()[i % c])
            .collect();
        let out = Tensor::from_vec(av.shape(), data)?;
        Ok(self.push(out, Op::AddBias(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// Multiplies every entry of `a` by the one-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return shape_err("scale_by expects a one-element scale");
        }
        let sv = self.value(s).item();
        let out = self.value(a).scale(sv);
        Ok(self.push(out, Op::ScaleBy(a, s), &[a, s]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a), &[a])
    }

    /// Each row divided by its root-mean-square (no learned gain).
    pub fn rms_norm_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return shape_err("rms_norm_rows needs a matrix");
        }
        let c = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            let r = rms(row);
            row.iter_mut().for_each(|x| *x /= r);
        }
        let out = Tensor::from_vec(av.shape(), data)?;
        Ok(self.push(out, Op::RmsNormRows(a), &[a]))
    }

    /// Unit-normalizes a vector: `x / sqrt(‖x‖² + eps)`.
    pub fn normalize(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 1 {
            return shape_err("normalize needs a vector");
        }
        let n = (av.sum_squares() + T::of(NORMALIZE_EPS)).sqrt();
        let out = av.map(|x| x / n);
        Ok(self.push(out, Op::Normalize(a), &[a]))
    }

    /// Row-wise softmax; when `causal`, entry `(i, j)` with `j > i` is masked out.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return shape_err("softmax_rows needs a matrix");
        }
        let c = av.cols();
        let mut data = av.data().to_vec();
        for (i, row) in data.chunks_mut(c).enumerate() {
            let live = if causal { (i + 1).min(c) } else { c };
            softmax_in_place(&mut row[..live]);
            row[live..].iter_mut().for_each(|x| *x = T::zero());
        }
        let out = Tensor::from_vec(av.shape(), data)?;
        Ok(self.push(out, Op::SoftmaxRows(a), &[a]))
    }

    /// The `i`-th slice along the leading axis (a row of a matrix, an element of a vector).
    pub fn index0(&mut self, a: Var, i: usize) -> Result<Var> {
        let out = self.value(a).index0(i)?;
        Ok(self.push(out, Op::Index0(a, i), &[a]))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 || width == 0 || start + width > av.cols() {
            return shape_err(format!("slice_cols {start}+{width} of {:?}", av.shape()));
        }
        let (r, c) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&av.data()[i * c + start..i * c + start + width]);
        }
        let out = Tensor::matrix(r, width, data)?;
        Ok(self.push(out, Op::SliceCols { x: a, start }, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let rows = self.value(first).rows();
        if parts
            .iter()
            .any(|&p| self.value(p).rank() != 2 || self.value(p).rows() != rows)
        {
            return shape_err("concat_cols needs matrices with equal row counts");
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks equally shaped nodes along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<Tensor<T>> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let out = Tensor::stack(&tensors)?;
        Ok(self.push(out, Op::Stack(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 || ids.is_empty() {
            return shape_err("gather needs a matrix table and at least one id");
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= tv.rows()) {
            return Err(Error::Index(format!(
                "row {bad} out of range for table of {} rows",
                tv.rows()
            )));
        }
        let c = tv.cols();
        let data = ids
            .iter()
            .flat_map(|&i| tv.row(i).iter().copied())
            .collect();
        let out = Tensor::matrix(ids.len(), c, data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Sum over `(row, target)` pairs of the numerically stable negative log-likelihood.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.cols() < 2 {
            return shape_err("cross_entropy needs a matrix of logits with at least two classes");
        }
        let mut total = T::zero();
        for &(r, t) in targets {
            if r >= lv.rows() || t >= lv.cols() {
                return Err(Error::Index(format!(
                    "target ({r}, {t}) outside logits {:?}",
                    lv.shape()
                )));
            }
            total += nll(lv.row(r), t);
        }
        let out = Tensor::scalar(total);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum_squares());
        self.push(out, Op::SumSquares(a), &[a])
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    ///
    /// Parameters that `loss` does not depend on receive a zero tensor.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(Tensor::from_vec(self.shape(loss), vec![T::one()])?);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
        }
        let out = self
            .params
            .iter()
            .map(|&p| {
                let g = grads
                    .get_mut(p.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(self.shape(p)));
                (p, g)
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    // dA = G Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        let gr = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let br = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] = gr.iter().zip(br).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da)?)?;
                }
                if self.wants(*b) {
                    // dB = Aᵀ G
                    let mut db = vec![T::zero(); k * n];
                    let at = av.transpose()?;
                    matmul_into(at.data(), g.data(), &mut db, k, m, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db)?)?;
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if self.wants(*a) {
                    // dA = G B
                    let mut da = vec![T::zero(); m * k];
                    matmul_into(g.data(), bv.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da)?)?;
                }
                if self.wants(*b) {
                    // dB = Gᵀ A
                    let mut db = vec![T::zero(); n * k];
                    let gt = g.transpose()?;
                    matmul_into(gt.data(), av.data(), &mut db, n, m, k);
                    self.accumulate(grads, *b, Tensor::matrix(n, k, db)?)?;
                }
            }
            Op::MatVec(a, x) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, Tensor::outer(g, self.value(*x))?)?;
                }
                if self.wants(*x) {
                    self.accumulate(grads, *x, self.value(*a).mat_t_vec(g)?)?;
                }
            }
            Op::MatTVec(a, x) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, Tensor::outer(self.value(*x), g)?)?;
                }
                if self.wants(*x) {
                    self.accumulate(grads, *x, self.value(*a).matvec(g)?)?;
                }
            }
            Op::Outer(u, v) => {
                if self.wants(*u) {
                    self.accumulate(grads, *u, g.matvec(self.value(*v))?)?;
                }
                if self.wants(*v) {
                    self.accumulate(grads, *v, g.mat_t_vec(self.value(*u))?)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.scale(-T::one()))?;
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.mul(self.value(*b))?)?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.mul(self.value(*a))?)?;
                }
            }
            Op::AddBias(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.wants(*b) {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for row in g.data().chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, &x)| *d += x);
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(self.shape(*b), db)?)?;
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s))?,
            Op::ScaleBy(a, s) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.scale(self.value(*s).item()))?;
                }
                if self.wants(*s) {
                    let ds = g.dot(self.value(*a))?;
                    self.accumulate(grads, *s, Tensor::from_vec(self.shape(*s), vec![ds])?)?;
                }
            }
            Op::Sigmoid(a) => {
                let d = g.mul(&out.map(|y| y * (T::one() - y)))?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Silu(a) => {
                let d = self.value(*a).map(|x| {
                    let s = sigmoid(x);
                    s + x * s * (T::one() - s)
                });
                self.accumulate(grads, *a, g.mul(&d)?)?;
            }
            Op::RmsNormRows(a) => {
                let xv = self.value(*a);
                let c = xv.cols();
                let n = T::of(c as f64);
                let mut dx = vec![T::zero(); xv.numel()];
                for ((xr, yr), (gr, dr)) in xv
                    .data()
                    .chunks(c)
                    .zip(out.data().chunks(c))
                    .zip(g.data().chunks(c).zip(dx.chunks_mut(c)))
                {
                    let r = rms(xr);
                    let gy: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / n;
                    for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = (gi - yi * gy) / r;
                    }
                }
                self.accumulate(grads, *a, Tensor::from_vec(xv.shape(), dx)?)?;
            }
            Op::Normalize(a) => {
                let xv = self.value(*a);
                let n = (xv.sum_squares() + T::of(NORMALIZE_EPS)).sqrt();
                let gy = g.dot(out)?;
                let dx = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &yi)| (gi - yi * gy) / n)
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(xv.shape(), dx)?)?;
            }
            Op::SoftmaxRows(x) => {
                let c = out.cols();
                let mut dx = vec![T::zero(); out.numel()];
                for ((yr, gr), dr) in out
                    .data()
                    .chunks(c)
                    .zip(g.data().chunks(c))
                    .zip(dx.chunks_mut(c))
                {
                    let s: T = yr.iter().zip(gr).map(|(&y, &gi)| y * gi).sum();
                    for ((d, &y), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = y * (gi - s);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(out.shape(), dx)?)?;
            }
            Op::Index0(a, i) => {
                let src = self.value(*a);
                let inner = g.numel();
                let mut d = Tensor::zeros(src.shape());
                d.data_mut()[i * inner..(i + 1) * inner].copy_from_slice(g.data());
                self.accumulate(grads, *a, d)?;
            }
            Op::SliceCols { x, start } => {
                let src = self.value(*x);
                let (c, w) = (src.cols(), g.cols());
                let mut d = Tensor::zeros(src.shape());
                for i in 0..src.rows() {
                    d.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *x, d)?;
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            data.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(rows, w, data)?)?;
                    }
                    offset += w;
                }
            }
            Op::Stack(parts) => {
                for (i, &p) in parts.iter().enumerate() {
                    if self.wants(p) {
                        self.accumulate(grads, p, g.index0(i)?)?;
                    }
                }
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.reshape(self.shape(*a))?)?,
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut d = Tensor::zeros(tv.shape());
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut d.data_mut()[id * c..(id + 1) * c];
                    dst.iter_mut().zip(g.row(r)).for_each(|(x, &y)| *x += y);
                }
                self.accumulate(grads, *table, d)?;
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let up = g.item();
                let mut d = Tensor::zeros(lv.shape());
                for &(r, t) in targets {
                    let mut p = lv.row(r).to_vec();
                    softmax_in_place(&mut p);
                    p[t] -= T::one();
                    let dst = &mut d.data_mut()[r * c..(r + 1) * c];
                    dst.iter_mut().zip(&p).for_each(|(x, &y)| *x += y * up);
                }
                self.accumulate(grads, *logits, d)?;
            }
            Op::Sum(a) => {
                let up = g.item();
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), up))?;
            }
            Op::SumSquares(a) => {
                let up = g.item() * T::of(2.0);
                self.accumulate(grads, *a, self.value(*a).scale(up))?;
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn rms<T: Scalar>(row: &[T]) -> T {
    let ms = row.iter().map(|&x| x * x).sum::<T>() / T::of(row.len() as f64);
    (ms + T::of(RMS_EPS)).sqrt()
}

/// Numerically stable softmax (max subtraction) in place.
pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    xs.iter_mut().for_each(|x| *x /= z);
}

/// `log Σ exp(x)` with max subtraction.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// Negative log-likelihood of `target` under `softmax(logits)`.
pub fn nll<T: Scalar>(logits: &[T], target: usize) -> T {
    log_sum_exp(logits) - logits[target]
}

/// Cross-entropy of a single logit vector; errors on an out-of-range target.
pub fn log_softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, target: usize) -> Result<T> {
    if logits.numel() < 2 {
        return shape_err("cross-entropy needs at least two classes");
    }
    if target >= logits.numel() {
        return Err(Error::Index(format!(
            "target {target} out of range for {} classes",
            logits.numel()
        )));
    }
    Ok(nll(logits.data(), target))
}
