//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation appends a node to the [`Tape`] and returns a [`Var`]
//! handle. Nodes are appended in evaluation order, so walking the tape
//! backwards from the loss visits each node once in reverse topological
//! order. Gradients of shared subexpressions accumulate.
//!
//! ```
//! use grbe::num::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Matrix::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

use std::sync::Arc;

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Mask probabilities are clamped to this distance from 0 and 1 before
/// the logit transform in [`Tape::concrete`].
pub const MASK_CLAMP: f64 = 1e-6;

/// Deliberate backward-pass defects, used to prove that the gradient
/// checker catches real mistakes.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    FlipSigmoidGradient,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    LogSumExpRows(Var),
    GatherRows(Var, Arc<[usize]>),
    PickCols(Var, Arc<[usize]>),
    Propagate {
        h: Var,
        w: Var,
        edges: Arc<[(usize, usize)]>,
        self_scale: f64,
    },
    SegmentMean {
        x: Var,
        segment: Arc<[usize]>,
        weight: Arc<[f64]>,
        norm: Vec<f64>,
    },
    NormalizeRows(Var, Vec<f64>),
    Concrete {
        m: Var,
        inv_temp: f64,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation for a single backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when the loss
    /// does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but materializes zeros of the right shape.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::contract(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Fault) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Input or parameter. Constants are leaves whose gradient is ignored.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let out = self.value(a).matmul(self.value(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_err("matmul_t", sa, sb));
        }
        let mut out = Matrix::zeros(sa.0, sb.0);
        gemm(self.value(a), false, self.value(b), true, &mut out, 0.0);
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Matrix::from_vec(sa.0, sa.1, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a `1×c` row to every row of an `n×c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(shape_err("add_row", sa, sr));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa.0 {
            for (x, b) in out.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// `scale·a + shift`, with scalar constants broadcast over `a`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.data().is_empty() {
            return Err(Error::contract("mean of an empty matrix"));
        }
        let m = v.data().iter().sum::<f64>() / v.data().len() as f64;
        Ok(self.push(Matrix::scalar(m), Op::Mean(a)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(shape_err("concat_cols", sa, sb));
        }
        let mut out = Matrix::zeros(sa.0, sa.1 + sb.1);
        for i in 0..sa.0 {
            let row = out.row_mut(i);
            row[..sa.1].copy_from_slice(self.nodes[a.0].value.row(i));
            row[sa.1..].copy_from_slice(self.nodes[b.0].value.row(i));
        }
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.shape(p).1,
            None => return Err(Error::contract("concat_rows of nothing")),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(shape_err("concat_rows", (rows, cols), s));
            }
            rows += s.0;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Row-wise `log Σ_j exp(a_ij)`, shifted by the row maximum.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.cols() == 0 {
            return Err(Error::contract("logsumexp over zero columns"));
        }
        let mut out = Matrix::zeros(v.rows(), 1);
        for i in 0..v.rows() {
            let row = v.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            out.set(i, 0, m + s.ln());
        }
        Ok(self.push(out, Op::LogSumExpRows(a)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let v = self.value(a);
        let (n, c) = v.shape();
        let mut out = Matrix::zeros(idx.len(), c);
        for (o, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(Error::contract(format!("gather_rows: row {i} out of {n}")));
            }
            out.row_mut(o).copy_from_slice(v.row(i));
        }
        Ok(self.push(out, Op::GatherRows(a, idx)))
    }

    /// `out_i = a[i, idx_i]` as an `n×1` column.
    pub fn pick_cols(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let v = self.value(a);
        if idx.len() != v.rows() {
            return Err(shape_err("pick_cols", v.shape(), (idx.len(), 1)));
        }
        let mut out = Matrix::zeros(v.rows(), 1);
        for (i, &j) in idx.iter().enumerate() {
            if j >= v.cols() {
                return Err(Error::contract(format!("pick_cols: column {j} out of {}", v.cols())));
            }
            out.set(i, 0, v.get(i, j));
        }
        Ok(self.push(out, Op::PickCols(a, idx)))
    }

    /// Edge-weighted neighbourhood aggregation over undirected edges:
    /// `out_v = self_scale·h_v + Σ_{(u,v)} w_uv·h_u`, each stored edge
    /// contributing in both directions with the same weight.
    pub fn propagate(
        &mut self,
        h: Var,
        w: Var,
        edges: Arc<[(usize, usize)]>,
        self_scale: f64,
    ) -> Result<Var> {
        let (sh, sw) = (self.shape(h), self.shape(w));
        if sw != (edges.len(), 1) {
            return Err(shape_err("propagate weights", sw, (edges.len(), 1)));
        }
        let hv = self.value(h);
        let wv = self.value(w).data();
        let mut out = hv.map(|x| self_scale * x);
        for (e, &(u, v)) in edges.iter().enumerate() {
            if u >= sh.0 || v >= sh.0 {
                return Err(Error::contract(format!(
                    "propagate: edge ({u},{v}) out of {} nodes",
                    sh.0
                )));
            }
            let we = wv[e];
            if we == 0.0 {
                continue;
            }
            for c in 0..sh.1 {
                let hu = hv.get(u, c);
                let hvv = hv.get(v, c);
                out.data_mut()[v * sh.1 + c] += we * hu;
                out.data_mut()[u * sh.1 + c] += we * hvv;
            }
        }
        Ok(self.push(
            out,
            Op::Propagate {
                h,
                w,
                edges,
                self_scale,
            },
        ))
    }

    /// Weighted mean of rows per segment: `out_s = Σ_{i∈s} w_i x_i / Σ_{i∈s} w_i`.
    ///
    /// Fails with [`Error::Degenerate`] when a segment has zero total weight.
    pub fn segment_mean(
        &mut self,
        x: Var,
        segment: Arc<[usize]>,
        weight: Arc<[f64]>,
        segments: usize,
    ) -> Result<Var> {
        let v = self.value(x);
        let (n, c) = v.shape();
        if segment.len() != n || weight.len() != n {
            return Err(shape_err("segment_mean", (n, c), (segment.len(), weight.len())));
        }
        let mut norm = vec![0.0; segments];
        for (&s, &w) in segment.iter().zip(weight.iter()) {
            if s >= segments {
                return Err(Error::contract(format!("segment {s} out of {segments}")));
            }
            norm[s] += w;
        }
        if let Some(s) = norm.iter().position(|&z| z <= 0.0) {
            return Err(Error::Degenerate(format!("segment {s} selects no rows")));
        }
        let mut out = Matrix::zeros(segments, c);
        for i in 0..n {
            let w = weight[i];
            if w == 0.0 {
                continue;
            }
            let s = segment[i];
            let f = w / norm[s];
            let src = v.row(i);
            for (o, &xv) in out.row_mut(s).iter_mut().zip(src) {
                *o += f * xv;
            }
        }
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                segment,
                weight,
                norm,
            },
        ))
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut out = v.clone();
        let mut norms = Vec::with_capacity(v.rows());
        for i in 0..v.rows() {
            let n = v.row(i).iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            norms.push(n);
            for x in out.row_mut(i) {
                *x /= n;
            }
        }
        self.push(out, Op::NormalizeRows(a, norms))
    }

    /// Binary concrete relaxation of Bernoulli(`m`) draws:
    /// `σ((logit(m) + g)/t)` where `g = logit(u)` is the recorded noise.
    ///
    /// The noise enters as a constant, so gradients flow only into `m`.
    /// `m` is clamped to `[MASK_CLAMP, 1 − MASK_CLAMP]` before the logit;
    /// the clamped region has zero gradient.
    pub fn concrete(&mut self, m: Var, noise_logits: &[f64], temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::contract(format!("temperature must be > 0, got {temperature}")));
        }
        let v = self.value(m);
        if v.cols() != 1 || v.rows() != noise_logits.len() {
            return Err(shape_err("concrete", v.shape(), (noise_logits.len(), 1)));
        }
        let inv_temp = 1.0 / temperature;
        let data = v
            .data()
            .iter()
            .zip(noise_logits)
            .map(|(&p, &g)| relaxed_bernoulli(p, g, inv_temp))
            .collect();
        let out = Matrix::from_vec(noise_logits.len(), 1, data)?;
        Ok(self.push(out, Op::Concrete { m, inv_temp }))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.shape(root) != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                gemm(g, false, vb, true, &mut ga, 0.0);
                accumulate(grads, *a, ga);
                let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                gemm(va, true, g, false, &mut gb, 0.0);
                accumulate(grads, *b, gb);
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                gemm(g, false, vb, false, &mut ga, 0.0);
                accumulate(grads, *a, ga);
                let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                gemm(g, true, va, false, &mut gb, 0.0);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, elementwise(g, vb, |x, y| x * y));
                accumulate(grads, *b, elementwise(g, va, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let mut gr = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, &x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *acc += x;
                    }
                }
                accumulate(grads, *row, gr);
            }
            Op::Affine(a, s) => accumulate(grads, *a, g.map(|x| s * x)),
            Op::Sigmoid(a) => {
                let sign = if self.fault == Some(Fault::FlipSigmoidGradient) {
                    -1.0
                } else {
                    1.0
                };
                accumulate(grads, *a, elementwise(g, out, |x, y| sign * x * y * (1.0 - y)));
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, elementwise(g, va, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::Log(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, elementwise(g, va, |x, y| x / y));
            }
            Op::Exp(a) => accumulate(grads, *a, elementwise(g, out, |x, y| x * y)),
            Op::Abs(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, elementwise(g, va, |x, y| x * y.signum() * f64::from(y != 0.0)));
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                accumulate(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                accumulate(grads, *a, Matrix::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.shape(*a).1, self.shape(*b).1);
                let mut ga = Matrix::zeros(g.rows(), ca);
                let mut gb = Matrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    accumulate(grads, p, Matrix::from_vec(rows, cols, slice).expect("slice shape"));
                    offset += rows;
                }
            }
            Op::LogSumExpRows(a) => {
                let va = self.value(*a);
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let lse = out.get(r, 0);
                    let gr = g.get(r, 0);
                    for (o, &x) in ga.row_mut(r).iter_mut().zip(va.row(r)) {
                        *o = gr * (x - lse).exp();
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let (n, c) = self.shape(*a);
                let mut ga = Matrix::zeros(n, c);
                for (o, &src) in idx.iter().enumerate() {
                    for (acc, &x) in ga.row_mut(src).iter_mut().zip(g.row(o)) {
                        *acc += x;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::PickCols(a, idx) => {
                let (n, c) = self.shape(*a);
                let mut ga = Matrix::zeros(n, c);
                for (r, &j) in idx.iter().enumerate() {
                    ga.set(r, j, g.get(r, 0));
                }
                accumulate(grads, *a, ga);
            }
            Op::Propagate {
                h,
                w,
                edges,
                self_scale,
            } => {
                let hv = self.value(*h);
                let wv = self.value(*w).data();
                let c = hv.cols();
                let mut gh = g.map(|x| self_scale * x);
                let mut gw = Matrix::zeros(edges.len(), 1);
                for (e, &(u, v)) in edges.iter().enumerate() {
                    let we = wv[e];
                    let mut dw = 0.0;
                    for k in 0..c {
                        let gu = g.get(u, k);
                        let gv = g.get(v, k);
                        dw += gv * hv.get(u, k) + gu * hv.get(v, k);
                        if we != 0.0 {
                            gh.data_mut()[u * c + k] += we * gv;
                            gh.data_mut()[v * c + k] += we * gu;
                        }
                    }
                    gw.set(e, 0, dw);
                }
                accumulate(grads, *h, gh);
                accumulate(grads, *w, gw);
            }
            Op::SegmentMean {
                x,
                segment,
                weight,
                norm,
            } => {
                let (n, c) = self.shape(*x);
                let mut gx = Matrix::zeros(n, c);
                for i in 0..n {
                    let w = weight[i];
                    if w == 0.0 {
                        continue;
                    }
                    let s = segment[i];
                    let f = w / norm[s];
                    for (o, &gs) in gx.row_mut(i).iter_mut().zip(g.row(s)) {
                        *o = f * gs;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::NormalizeRows(a, norms) => {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yi), &gi) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *o = (gi - yi * dot) / norms[r];
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Concrete { m, inv_temp } => {
                let vm = self.value(*m);
                let mut gm = Matrix::zeros(vm.rows(), 1);
                for r in 0..vm.rows() {
                    let p = vm.get(r, 0);
                    if p <= MASK_CLAMP || p >= 1.0 - MASK_CLAMP {
                        continue;
                    }
                    let y = out.get(r, 0);
                    let dlogit = 1.0 / p + 1.0 / (1.0 - p);
                    gm.set(r, 0, g.get(r, 0) * y * (1.0 - y) * inv_temp * dlogit);
                }
                accumulate(grads, *m, gm);
            }
        }
    }
}

/// `σ((logit(clamp(p)) + g)·inv_temp)`.
pub fn relaxed_bernoulli(p: f64, noise_logit: f64, inv_temp: f64) -> f64 {
    let p = p.clamp(MASK_CLAMP, 1.0 - MASK_CLAMP);
    sigmoid((p.ln() - (1.0 - p).ln() + noise_logit) * inv_temp)
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
