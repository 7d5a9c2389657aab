//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is an append-only arena of nodes. Every operation records its
//! inputs and whatever it needs for the local derivative, so node indices are
//! already a topological order. [`Graph::backward`] walks them once, in
//! reverse, accumulating adjoints additively when a node has several consumers.
//!
//! Scalars are 1x1 matrices. Leaves created with [`Graph::param`] receive
//! gradients; leaves created with [`Graph::constant`] (inputs, masks, momentum
//! centers) do not, and neither does anything computed only from constants.

use alloc::vec;
use alloc::vec::Vec;

use super::linalg;
use super::matrix::gemm;
use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    SliceCols { src: Var, start: usize },
    SliceRows { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    LayerNormRows { src: Var, inv_std: Vec<f64> },
    RowNormalize { src: Var, norms: Vec<f64> },
    LogDet { src: Var, inverse: Matrix },
    Pinv(Var),
    CrossEntropy { logits: Var, probs: Matrix, label: usize },
    Mask { src: Var, mask: Matrix },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    macs: u64,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `var`; `None` when `var` does
    /// not influence the root or does not require gradients.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Moves the gradient of `var` out, leaving `None`.
    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Gradient of `var`, or zeros of the given shape.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Matrix {
        self.get(var).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulate operations executed by matrix products so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Moves the value of `v` out, leaving an empty matrix in the node.
    pub(crate) fn take_value(&mut self, v: Var) -> Matrix {
        core::mem::replace(&mut self.nodes[v.0].value, Matrix::zeros(0, 0))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Learnable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn matmul_general(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let value = gemm(av, ta, bv, tb)?;
        let inner = if ta { av.rows() } else { av.cols() };
        self.macs += (value.rows() * value.cols() * inner) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_general(a, false, b, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_general(a, false, b, true)
    }

    /// `aᵀ · b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_general(a, true, b, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.add(&self.nodes[b.0].value)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.sub(&self.nodes[b.0].value)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.hadamard(&self.nodes[b.0].value)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a 1 x cols row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let rv = &self.nodes[row.0].value;
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::dims("add_row", av.shape(), rv.shape()));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// Multiplies every row of `a` elementwise by a 1 x cols row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let rv = &self.nodes[row.0].value;
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::dims("mul_row", av.shape(), rv.shape()));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *x *= b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.nodes[a.0].value.scale(s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.nodes[a.0].value.map(|v| v + s);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, libm::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = linalg::softmax_rows(&self.nodes[a.0].value);
        let rg = self.rg(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let sv = &self.nodes[src.0].value;
        if start + len > sv.cols() {
            return Err(Error::dims("slice_cols", sv.shape(), (sv.rows(), start + len)));
        }
        let value = sv.slice_cols(start, len);
        let rg = self.rg(&[src]);
        Ok(self.push(value, Op::SliceCols { src, start }, rg))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let sv = &self.nodes[src.0].value;
        if start + len > sv.rows() {
            return Err(Error::dims("slice_rows", sv.shape(), (start + len, sv.cols())));
        }
        let value = sv.slice_rows(start, len);
        let rg = self.rg(&[src]);
        Ok(self.push(value, Op::SliceRows { src, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let value = Matrix::hstack(&mats)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let value = Matrix::vstack(&mats)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Column means, 1 x cols.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mean_rows();
        let rg = self.rg(&[a]);
        self.push(value, Op::MeanRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.nodes[a.0].value.sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Per-row standardization `(x - μ) / sqrt(σ² + 1e-5)` without affine terms.
    pub fn layer_norm_rows(&mut self, src: Var) -> Var {
        let x = &self.nodes[src.0].value;
        let cols = x.cols() as f64;
        let mut value = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        let rg = self.rg(&[src]);
        self.push(value, Op::LayerNormRows { src, inv_std }, rg)
    }

    /// Scales every row to unit Euclidean norm.
    pub fn row_normalize(&mut self, src: Var) -> Result<Var> {
        let x = &self.nodes[src.0].value;
        let mut value = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let n = linalg::norm(row);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::DegenerateVector { op: "row_normalize" });
            }
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let rg = self.rg(&[src]);
        Ok(self.push(value, Op::RowNormalize { src, norms }, rg))
    }

    /// Cosine similarity of two 1 x L rows, as a scalar node.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let an = self.row_normalize(a)?;
        let bn = self.row_normalize(b)?;
        self.matmul_nt(an, bn)
    }

    /// `log det(S)` for symmetric positive definite `S`; gradient `S⁻¹`.
    pub fn logdet_psd(&mut self, src: Var) -> Result<Var> {
        let (value, eig) = linalg::logdet_psd_eigen(&self.nodes[src.0].value)?;
        let inverse = eig.reconstruct_with(|l| 1.0 / l);
        let rg = self.rg(&[src]);
        Ok(self.push(Matrix::scalar(value), Op::LogDet { src, inverse }, rg))
    }

    /// Moore–Penrose pseudo-inverse, differentiable where the rank is locally constant.
    pub fn pinv(&mut self, src: Var) -> Var {
        let value = linalg::pinv(&self.nodes[src.0].value);
        let rg = self.rg(&[src]);
        self.push(value, Op::Pinv(src), rg)
    }

    /// `-log softmax(logits)[label]` for a 1 x C logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = &self.nodes[logits.0].value;
        if z.rows() != 1 || label >= z.cols() {
            return Err(Error::dims("cross_entropy", z.shape(), (1, label + 1)));
        }
        let probs = linalg::softmax_rows(z);
        let value = cross_entropy_value(z.as_slice(), label);
        let rg = self.rg(&[logits]);
        Ok(self.push(Matrix::scalar(value), Op::CrossEntropy { logits, probs, label }, rg))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, src: Var, mask: Matrix) -> Result<Var> {
        let value = self.nodes[src.0].value.hadamard(&mask)?;
        let rg = self.rg(&[src]);
        Ok(self.push(value, Op::Mask { src, mask }, rg))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if rv.shape() != (1, 1) {
            return Err(Error::dims("backward", rv.shape(), (1, 1)));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                if self.wants(a) {
                    let da = if ta {
                        gemm(val(b), tb, g, true)
                    } else {
                        gemm(g, false, val(b), !tb)
                    };
                    accumulate(grads, a, da.expect("matmul adjoint shapes"));
                }
                if self.wants(b) {
                    let db = if tb {
                        gemm(g, true, val(a), ta)
                    } else {
                        gemm(val(a), !ta, g, false)
                    };
                    accumulate(grads, b, db.expect("matmul adjoint shapes"));
                }
            }
            &Op::Add(a, b) => {
                self.send(grads, a, || g.clone());
                self.send(grads, b, || g.clone());
            }
            &Op::Sub(a, b) => {
                self.send(grads, a, || g.clone());
                self.send(grads, b, || g.scale(-1.0));
            }
            &Op::Mul(a, b) => {
                self.send(grads, a, || g.hadamard(val(b)).expect("same shape"));
                self.send(grads, b, || g.hadamard(val(a)).expect("same shape"));
            }
            &Op::AddRow(a, row) => {
                self.send(grads, a, || g.clone());
                self.send(grads, row, || g.mean_rows().scale(g.rows() as f64));
            }
            &Op::MulRow(a, row) => {
                let rv = val(row);
                self.send(grads, a, || {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        for (x, b) in d.row_mut(r).iter_mut().zip(rv.as_slice()) {
                            *x *= b;
                        }
                    }
                    d
                });
                self.send(grads, row, || {
                    let av = val(a);
                    let mut d = Matrix::zeros(1, av.cols());
                    for r in 0..av.rows() {
                        for ((x, &gv), &avv) in d.as_mut_slice().iter_mut().zip(g.row(r)).zip(av.row(r)) {
                            *x += gv * avv;
                        }
                    }
                    d
                });
            }
            &Op::Scale(a, s) => self.send(grads, a, || g.scale(s)),
            &Op::AddScalar(a) => self.send(grads, a, || g.clone()),
            &Op::Relu(a) => self.send(grads, a, || {
                g.zip_map(val(a), |gv, x| if x > 0.0 { gv } else { 0.0 }).expect("same shape")
            }),
            &Op::Tanh(a) => self.send(grads, a, || {
                g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y)).expect("same shape")
            }),
            &Op::Sigmoid(a) => self.send(grads, a, || {
                g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y)).expect("same shape")
            }),
            &Op::SoftmaxRows(a) => self.send(grads, a, || {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dotp = linalg::dot(yr, gr);
                    for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dotp);
                    }
                }
                dx
            }),
            &Op::Transpose(a) => self.send(grads, a, || g.transpose()),
            &Op::SliceCols { src, start } => self.send(grads, src, || {
                let s = val(src);
                let mut dx = Matrix::zeros(s.rows(), s.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                }
                dx
            }),
            &Op::SliceRows { src, start } => self.send(grads, src, || {
                let s = val(src);
                let mut dx = Matrix::zeros(s.rows(), s.cols());
                for r in 0..g.rows() {
                    dx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                dx
            }),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    self.send(grads, p, || g.slice_cols(offset, w));
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = val(p).rows();
                    self.send(grads, p, || g.slice_rows(offset, h));
                    offset += h;
                }
            }
            &Op::MeanRows(a) => self.send(grads, a, || {
                let x = val(a);
                let inv = 1.0 / x.rows() as f64;
                Matrix::from_fn(x.rows(), x.cols(), |_, c| g.get(0, c) * inv)
            }),
            &Op::Sum(a) => self.send(grads, a, || {
                let x = val(a);
                Matrix::filled(x.rows(), x.cols(), g.item())
            }),
            Op::LayerNormRows { src, inv_std } => self.send(grads, *src, || {
                let y = &node.value;
                let cols = y.cols() as f64;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let mean_g = gr.iter().sum::<f64>() / cols;
                    let mean_gy = linalg::dot(gr, yr) / cols;
                    for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = inv_std[r] * (gv - mean_g - yv * mean_gy);
                    }
                }
                dx
            }),
            Op::RowNormalize { src, norms } => self.send(grads, *src, || {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let proj = linalg::dot(yr, gr);
                    for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = (gv - yv * proj) / norms[r];
                    }
                }
                dx
            }),
            Op::LogDet { src, inverse } => self.send(grads, *src, || inverse.scale(g.item())),
            &Op::Pinv(src) => self.send(grads, src, || pinv_adjoint(val(src), &node.value, g)),
            Op::CrossEntropy { logits, probs, label } => self.send(grads, *logits, || {
                let mut d = probs.clone();
                d.as_mut_slice()[*label] -= 1.0;
                d.scale(g.item())
            }),
            Op::Mask { src, mask } => self.send(grads, *src, || g.hadamard(mask).expect("same shape")),
        }
    }

    fn send(&self, grads: &mut [Option<Matrix>], v: Var, f: impl FnOnce() -> Matrix) {
        if self.wants(v) {
            accumulate(grads, v, f());
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d).expect("gradient shape matches value"),
        slot @ None => *slot = Some(d),
    }
}

/// Adjoint of `P = A⁺`:
/// `Ā = -Pᵀ Ḡ Pᵀ + (I - A P) Ḡᵀ P Pᵀ + Pᵀ P Ḡᵀ (I - P A)`.
fn pinv_adjoint(a: &Matrix, p: &Matrix, g: &Matrix) -> Matrix {
    let mm = |x: &Matrix, tx: bool, y: &Matrix, ty: bool| gemm(x, tx, y, ty).expect("pinv adjoint shapes");
    let (m, n) = a.shape();
    let left = Matrix::identity(m).sub(&mm(a, false, p, false)).expect("square");
    let right = Matrix::identity(n).sub(&mm(p, false, a, false)).expect("square");
    let mut out = mm(&mm(p, true, g, false), false, p, true).scale(-1.0);
    let gt_p_pt = mm(&mm(g, true, p, false), false, p, true);
    out.add_assign(&mm(&left, false, &gt_p_pt, false)).expect("pinv adjoint shapes");
    let pt_p_gt = mm(&mm(p, true, p, false), false, g, true);
    out.add_assign(&mm(&pt_p_gt, false, &right, false)).expect("pinv adjoint shapes");
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Numerically stable `-log softmax(z)[label]`.
pub fn cross_entropy_value(z: &[f64], label: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(z.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
    lse - z[label]
}
