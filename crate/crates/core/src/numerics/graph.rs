//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Each operation appends a
//! node holding its output value and enough context to run its adjoint;
//! [`Graph::backward`] then walks the tape in reverse once.

use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::numerics::params::Parameter;
use crate::numerics::tensor::{gemm, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, b_trans: bool },
    LeftMatMulBatched { p: Var, x: Var, batch: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow { x: Var, bias: Var },
    Scale(Var, f64),
    AddScalar(Var),
    Sqrt(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, batch: usize, heads: usize, probs: Vec<f64> },
    Slice { x: Var, r0: usize, c0: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, idx: Vec<usize> },
    InsertRows { part: Var, token: Var, kept: Vec<usize>, n: usize },
    BatchTranspose { x: Var, batch: usize },
    Sum(Var),
    RowSum(Var),
    GateRows { x: Var, scores: Var },
    StraightThrough(Var),
    RowNormalize { x: Var, norms: Vec<f64> },
    SubbandGram { x: Var, n_rx: usize, n_tx: usize, per_band: usize },
    BlockMatVec { g: Var, v: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation tape. Cleared by dropping it; one per training step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<String, Var>,
    bound_order: Vec<String>,
    scope: String,
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not
    /// require gradients or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(&self.shapes[v.0], g.clone()).expect("gradient shape"))
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice()
}

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Real embedding `[[Re, -Im], [Im, Re]]` of one subcarrier's `n_rx × n_tx`
/// channel matrix stored as a token (`re` block then `im` block).
fn real_embedding(token: &[f64], n_rx: usize, n_tx: usize, out: &mut [f64]) {
    let off = n_rx * n_tx;
    let w = 2 * n_tx;
    for r in 0..n_rx {
        for t in 0..n_tx {
            let re = token[r * n_tx + t];
            let im = token[off + r * n_tx + t];
            out[r * w + t] = re;
            out[r * w + n_tx + t] = -im;
            out[(n_rx + r) * w + t] = im;
            out[(n_rx + r) * w + n_tx + t] = re;
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a named parameter; repeated calls with the same name return the
    /// same leaf.
    pub fn param(&mut self, name: &str, p: &Parameter) -> Var {
        let key = format!("{}{name}", self.scope);
        if let Some(v) = self.bound.get(&key) {
            return *v;
        }
        let v = self.leaf(p.value.clone(), p.requires_grad);
        self.bound.insert(key.clone(), v);
        self.bound_order.push(key);
        v
    }

    /// Prefix applied to subsequently bound parameter names, so two models
    /// with overlapping names can share one graph.
    pub fn set_scope(&mut self, scope: &str) {
        self.scope = scope.to_string();
    }

    /// Parameters bound so far, in binding order.
    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> + '_ {
        self.bound_order.iter().map(|n| (n.as_str(), self.bound[n]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_trans: bool) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (k2, n) = if b_trans { (bc, br) } else { (br, bc) };
        if k != k2 {
            return shape_err(format!("matmul {m}x{k} by {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), b_trans, &mut out, 0.0);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, b_trans }, ng))
    }

    /// Per-sample `P · X_b` for `x` stacked as `batch` blocks of `n` rows.
    pub fn left_matmul_batched(&mut self, p: Var, x: Var, batch: usize) -> Result<Var> {
        let (pr, pc) = self.dims(p);
        let (xr, d) = self.dims(x);
        if batch == 0 || xr != batch * pc {
            return shape_err(format!("left matmul {pr}x{pc} on {xr}x{d} with batch {batch}"));
        }
        let mut out = vec![0.0; batch * pr * d];
        let xv = self.value(x).data();
        let pv = self.value(p).data();
        for b in 0..batch {
            gemm(
                pr,
                pc,
                d,
                pv,
                false,
                &xv[b * pc * d..(b + 1) * pc * d],
                false,
                &mut out[b * pr * d..(b + 1) * pr * d],
                0.0,
            );
        }
        let ng = self.needs(p) || self.needs(x);
        Ok(self.push(Tensor::new(&[batch * pr, d], out)?, Op::LeftMatMulBatched { p, x, batch }, ng))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return shape_err(format!("{what}: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "div", |x, y| x / y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Div(a, b), ng))
    }

    /// Adds a length-`d` bias to every row of an `n×d` tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, d) = self.dims(x);
        if self.value(bias).len() != d {
            return shape_err(format!("row bias of {} for width {d}", self.value(bias).len()));
        }
        let bv = self.value(bias).data().to_vec();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(d) {
            row.iter_mut().zip(&bv).for_each(|(v, b)| *v += b);
        }
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(t, Op::AddRow { x, bias }, ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v * c);
        let ng = self.needs(x);
        self.push(t, Op::Scale(x, c), ng)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v + c);
        let ng = self.needs(x);
        self.push(t, Op::AddScalar(x), ng)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::sqrt);
        let ng = self.needs(x);
        self.push(t, Op::Sqrt(x), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu);
        let ng = self.needs(x);
        self.push(t, Op::Gelu(x), ng)
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (_, m) = self.dims(x);
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(m.max(1)) {
            softmax_in_place(row);
        }
        let ng = self.needs(x);
        self.push(t, Op::SoftmaxRows(x), ng)
    }

    /// Per-row normalization to zero mean and unit variance (ε = 1e-5),
    /// followed by the affine `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.dims(x);
        if d == 0 || self.value(gain).len() != d || self.value(bias).len() != d {
            return shape_err(format!("layer norm width {d}"));
        }
        let xv = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut out = vec![0.0; n * d];
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(Tensor::new(&shape, out)?, Op::LayerNorm { x, gain, bias, xhat, inv_std }, ng))
    }

    /// Multi-head scaled dot-product attention over `batch` stacked sequences.
    ///
    /// Per sample and head: `softmax((Q Kᵀ + bias) / sqrt(d_head)) V`. `bias`
    /// is an `n×n` matrix shared across the batch and heads; it is a constant.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<&Tensor>,
        batch: usize,
        heads: usize,
    ) -> Result<Var> {
        let (rows, d) = self.dims(q);
        if self.dims(k) != (rows, d) || self.dims(v) != (rows, d) {
            return shape_err("attention q/k/v shapes differ");
        }
        if batch == 0 || heads == 0 || rows % batch != 0 || d % heads != 0 {
            return shape_err(format!("attention {rows}x{d} with batch {batch}, heads {heads}"));
        }
        let n = rows / batch;
        if let Some(b) = bias {
            if b.dims2() != (n, n) {
                return shape_err(format!("attention bias {:?} for {n} tokens", b.shape()));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; rows * d];
        let mut probs = vec![0.0; batch * heads * n * n];
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * n * n..(b * heads + h + 1) * n * n];
                let c0 = h * dh;
                for i in 0..n {
                    let qi = &qv[(b * n + i) * d + c0..(b * n + i) * d + c0 + dh];
                    for j in 0..n {
                        let kj = &kv[(b * n + j) * d + c0..(b * n + j) * d + c0 + dh];
                        let mut s: f64 = qi.iter().zip(kj).map(|(x, y)| x * y).sum();
                        if let Some(bt) = bias {
                            s += bt.data()[i * n + j];
                        }
                        p[i * n + j] = s * scale;
                    }
                    softmax_in_place(&mut p[i * n..(i + 1) * n]);
                    let o = &mut out[(b * n + i) * d + c0..(b * n + i) * d + c0 + dh];
                    for j in 0..n {
                        let w = p[i * n + j];
                        if w == 0.0 {
                            continue;
                        }
                        let vj = &vv[(b * n + j) * d + c0..(b * n + j) * d + c0 + dh];
                        o.iter_mut().zip(vj).for_each(|(a, x)| *a += w * x);
                    }
                }
            }
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(Tensor::new(&[rows, d], out)?, Op::Attention { q, k, v, batch, heads, probs }, ng))
    }

    /// Attention probabilities recorded by an [`Graph::attention`] node,
    /// laid out `[batch][head][query][key]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn slice(&mut self, x: Var, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if rows.end > r || cols.end > c || rows.start > rows.end || cols.start > cols.end {
            return shape_err(format!("slice {rows:?},{cols:?} of {r}x{c}"));
        }
        let (nr, nc) = (rows.len(), cols.len());
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(nr * nc);
        for i in rows.clone() {
            out.extend_from_slice(&xv[i * c + cols.start..i * c + cols.end]);
        }
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(&[nr, nc], out)?, Op::Slice { x, r0: rows.start, c0: cols.start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|p| self.dims(*p).0).unwrap_or(0);
        if parts.iter().any(|p| self.dims(*p).0 != rows) {
            return shape_err("concat_cols row mismatch");
        }
        let total: usize = parts.iter().map(|p| self.dims(*p).1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(Tensor::new(&[rows, total], out)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|p| self.dims(*p).1).unwrap_or(0);
        if parts.iter().any(|p| self.dims(*p).1 != cols) {
            return shape_err("concat_rows column mismatch");
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        let rows = out.len() / cols.max(1);
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(Tensor::new(&[rows, cols], out)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Differentiable row gather; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return shape_err(format!("gather index {bad} of {r} rows"));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(&[idx.len(), c], out)?, Op::GatherRows { x, idx: idx.to_vec() }, ng))
    }

    /// Scatters `part` (batch blocks of `kept.len()` rows) into sequences of
    /// `n` rows, filling the remaining rows with the shared `token`.
    pub fn insert_rows(&mut self, part: Var, token: Var, kept: &[usize], n: usize) -> Result<Var> {
        let (pr, d) = self.dims(part);
        let m = kept.len();
        if self.value(token).len() != d {
            return shape_err(format!("mask token width {} vs {d}", self.value(token).len()));
        }
        if m == 0 || pr % m != 0 || kept.windows(2).any(|w| w[0] >= w[1]) || kept.iter().any(|&i| i >= n) {
            return shape_err(format!("kept indices {kept:?} invalid for {pr} rows into {n}"));
        }
        let batch = pr / m;
        let (pv, tv) = (self.value(part).data(), self.value(token).data());
        let mut out = Vec::with_capacity(batch * n * d);
        for b in 0..batch {
            let mut j = 0;
            for i in 0..n {
                if j < m && kept[j] == i {
                    out.extend_from_slice(&pv[(b * m + j) * d..(b * m + j + 1) * d]);
                    j += 1;
                } else {
                    out.extend_from_slice(tv);
                }
            }
        }
        let ng = self.needs(part) || self.needs(token);
        Ok(self.push(Tensor::new(&[batch * n, d], out)?, Op::InsertRows { part, token, kept: kept.to_vec(), n }, ng))
    }

    /// Transposes each of `batch` stacked `n×d` blocks into `d×n`.
    pub fn batch_transpose(&mut self, x: Var, batch: usize) -> Result<Var> {
        let (r, d) = self.dims(x);
        if batch == 0 || r % batch != 0 {
            return shape_err(format!("batch transpose of {r} rows by {batch}"));
        }
        let n = r / batch;
        let xv = self.value(x).data();
        let mut out = vec![0.0; r * d];
        for b in 0..batch {
            for i in 0..n {
                for c in 0..d {
                    out[(b * d + c) * n + i] = xv[(b * n + i) * d + c];
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(&[batch * d, n], out)?, Op::BatchTranspose { x, batch }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum of each row, shape `[n, 1]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let xv = self.value(x).data();
        let out: Vec<f64> = (0..r).map(|i| xv[i * c..(i + 1) * c].iter().sum()).collect();
        let ng = self.needs(x);
        self.push(Tensor::new(&[r, 1], out).expect("row sum"), Op::RowSum(x), ng)
    }

    /// Passes `x` through unchanged while routing a score gradient
    /// `Σ_c g[r,c]·x[r,c]` to `scores[r]`. The forward value is bit-identical
    /// to `x`.
    pub fn gate_rows(&mut self, x: Var, scores: Var) -> Result<Var> {
        let (r, _) = self.dims(x);
        if self.value(scores).len() != r {
            return shape_err(format!("{} scores for {r} rows", self.value(scores).len()));
        }
        let t = self.value(x).clone();
        let ng = self.needs(x) || self.needs(scores);
        Ok(self.push(t, Op::GateRows { x, scores }, ng))
    }

    /// Forward value `value`, backward identity to `x` (straight-through).
    pub fn straight_through(&mut self, x: Var, value: Tensor) -> Result<Var> {
        if value.shape() != self.shape(x) {
            return shape_err(format!("straight-through {:?} vs {:?}", value.shape(), self.shape(x)));
        }
        let ng = self.needs(x);
        Ok(self.push(value, Op::StraightThrough(x), ng))
    }

    /// Scales every row to unit L2 norm.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let mut t = self.value(x).clone();
        let mut norms = Vec::with_capacity(r);
        for row in t.data_mut().chunks_mut(c.max(1)) {
            let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm == 0.0 {
                return Err(Error::Validation("cannot normalize a zero row".into()));
            }
            row.iter_mut().for_each(|v| *v /= nrm);
            norms.push(nrm);
        }
        let ng = self.needs(x);
        Ok(self.push(t, Op::RowNormalize { x, norms }, ng))
    }

    /// Subband-averaged real Gram matrices `Σ_k R_kᵀ R_k / per_band`, where
    /// `R_k` is the real embedding of subcarrier `k`'s `n_rx × n_tx` channel.
    /// The output stacks one `2n_tx × 2n_tx` block per (sample, subband).
    pub fn subband_gram(&mut self, x: Var, n_rx: usize, n_tx: usize, per_band: usize) -> Result<Var> {
        let (rows, dt) = self.dims(x);
        if dt != 2 * n_rx * n_tx || per_band == 0 || rows % per_band != 0 {
            return shape_err(format!("subband gram on {rows}x{dt}"));
        }
        let blocks = rows / per_band;
        let w = 2 * n_tx;
        let h = 2 * n_rx;
        let xv = self.value(x).data();
        let mut out = vec![0.0; blocks * w * w];
        let mut emb = vec![0.0; h * w];
        for s in 0..blocks {
            let g = &mut out[s * w * w..(s + 1) * w * w];
            for k in 0..per_band {
                let row = s * per_band + k;
                real_embedding(&xv[row * dt..(row + 1) * dt], n_rx, n_tx, &mut emb);
                gemm(w, h, w, &emb, true, &emb, false, g, 1.0);
            }
            g.iter_mut().for_each(|v| *v /= per_band as f64);
        }
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(&[blocks * w, w], out)?, Op::SubbandGram { x, n_rx, n_tx, per_band }, ng))
    }

    /// Block matrix-vector product: row `i` of the output is `G_i · v_i`.
    pub fn block_matvec(&mut self, g: Var, v: Var) -> Result<Var> {
        let (m, n) = self.dims(v);
        if self.dims(g) != (m * n, n) {
            return shape_err(format!("block matvec {:?} with {m}x{n}", self.shape(g)));
        }
        let (gv, vv) = (self.value(g).data(), self.value(v).data());
        let mut out = vec![0.0; m * n];
        for b in 0..m {
            let gb = &gv[b * n * n..(b + 1) * n * n];
            let vb = &vv[b * n..(b + 1) * n];
            for i in 0..n {
                out[b * n + i] = gb[i * n..(i + 1) * n].iter().zip(vb).map(|(a, x)| a * x).sum();
            }
        }
        let ng = self.needs(g) || self.needs(v);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::BlockMatVec { g, v }, ng))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(&node.op, &node.value, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) || !n.needs_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn backprop(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b, b_trans } => {
                let (m, k) = self.dims(*a);
                let n = out.cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    // dA = G · Bᵀ  (or G · B when b is stored transposed)
                    let da = acc(grads, *a, m * k);
                    gemm(m, n, k, g, false, bv, !*b_trans, da, 1.0);
                }
                if self.needs(*b) {
                    if *b_trans {
                        // dB (n×k) = Gᵀ · A
                        let db = acc(grads, *b, n * k);
                        gemm(n, m, k, g, true, av, false, db, 1.0);
                    } else {
                        let db = acc(grads, *b, k * n);
                        gemm(k, m, n, av, true, g, false, db, 1.0);
                    }
                }
            }
            Op::LeftMatMulBatched { p, x, batch } => {
                let (pr, pc) = self.dims(*p);
                let d = self.dims(*x).1;
                let (pv, xv) = (self.value(*p).data(), self.value(*x).data());
                if self.needs(*p) {
                    let dp = acc(grads, *p, pr * pc);
                    for b in 0..*batch {
                        let gb = &g[b * pr * d..(b + 1) * pr * d];
                        let xb = &xv[b * pc * d..(b + 1) * pc * d];
                        gemm(pr, d, pc, gb, false, xb, true, dp, 1.0);
                    }
                }
                if self.needs(*x) {
                    let dx = acc(grads, *x, batch * pc * d);
                    for b in 0..*batch {
                        let gb = &g[b * pr * d..(b + 1) * pr * d];
                        gemm(pc, pr, d, pv, true, gb, false, &mut dx[b * pc * d..(b + 1) * pc * d], 1.0);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.needs(*a) {
                    acc(grads, *a, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if self.needs(*b) {
                    acc(grads, *b, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += sign * x);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let da = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                if self.needs(*b) {
                    let db = acc(grads, *b, g.len());
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let da = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] / bv[i];
                    }
                }
                if self.needs(*b) {
                    let db = acc(grads, *b, g.len());
                    for i in 0..g.len() {
                        db[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                    }
                }
            }
            Op::AddRow { x, bias } => {
                let d = out.cols();
                if self.needs(*x) {
                    acc(grads, *x, g.len()).iter_mut().zip(g).for_each(|(a, v)| *a += v);
                }
                if self.needs(*bias) {
                    let db = acc(grads, *bias, d);
                    for row in g.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                }
            }
            Op::Scale(x, c) => {
                acc(grads, *x, g.len()).iter_mut().zip(g).for_each(|(a, v)| *a += c * v);
            }
            Op::AddScalar(x) | Op::StraightThrough(x) => {
                acc(grads, *x, g.len()).iter_mut().zip(g).for_each(|(a, v)| *a += v);
            }
            Op::Sqrt(x) => {
                let dx = acc(grads, *x, g.len());
                for (i, y) in out.data().iter().enumerate() {
                    if *y > 0.0 {
                        dx[i] += g[i] * 0.5 / y;
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let dx = acc(grads, *x, g.len());
                for i in 0..g.len() {
                    dx[i] += g[i] * gelu_grad(xv[i]);
                }
            }
            Op::SoftmaxRows(x) => {
                let m = out.cols().max(1);
                let dx = acc(grads, *x, g.len());
                for ((y, gr), d) in out.data().chunks(m).zip(g.chunks(m)).zip(dx.chunks_mut(m)) {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..m {
                        d[j] += y[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = out.cols();
                let gv = self.value(*gain).data();
                if self.needs(*gain) {
                    let dg = acc(grads, *gain, d);
                    for (gr, h) in g.chunks(d).zip(xhat.chunks(d)) {
                        for c in 0..d {
                            dg[c] += gr[c] * h[c];
                        }
                    }
                }
                if self.needs(*bias) {
                    let db = acc(grads, *bias, d);
                    for gr in g.chunks(d) {
                        db.iter_mut().zip(gr).for_each(|(a, v)| *a += v);
                    }
                }
                if self.needs(*x) {
                    let dx = acc(grads, *x, g.len());
                    let mut dh = vec![0.0; d];
                    for r in 0..inv_std.len() {
                        let gr = &g[r * d..(r + 1) * d];
                        let h = &xhat[r * d..(r + 1) * d];
                        for c in 0..d {
                            dh[c] = gr[c] * gv[c];
                        }
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / d as f64;
                        for c in 0..d {
                            dx[r * d + c] += k * (d as f64 * dh[c] - s1 - h[c] * s2);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, batch, heads, probs } => {
                self.attention_backward(*q, *k, *v, *batch, *heads, probs, g, grads);
            }
            Op::Slice { x, r0, c0 } => {
                let c = self.dims(*x).1;
                let (nr, nc) = out.dims2();
                let len = self.value(*x).len();
                let dx = acc(grads, *x, len);
                for i in 0..nr {
                    let dst = &mut dx[(r0 + i) * c + c0..(r0 + i) * c + c0 + nc];
                    dst.iter_mut().zip(&g[i * nc..(i + 1) * nc]).for_each(|(a, v)| *a += v);
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2();
                let mut off = 0;
                for p in parts {
                    let pc = self.dims(*p).1;
                    if self.needs(*p) {
                        let dp = acc(grads, *p, rows * pc);
                        for r in 0..rows {
                            let src = &g[r * total + off..r * total + off + pc];
                            dp[r * pc..(r + 1) * pc].iter_mut().zip(src).for_each(|(a, v)| *a += v);
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.needs(*p) {
                        acc(grads, *p, len).iter_mut().zip(&g[off..off + len]).for_each(|(a, v)| *a += v);
                    }
                    off += len;
                }
            }
            Op::GatherRows { x, idx } => {
                let c = out.cols();
                let len = self.value(*x).len();
                let dx = acc(grads, *x, len);
                for (r, &i) in idx.iter().enumerate() {
                    dx[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(a, v)| *a += v);
                }
            }
            Op::InsertRows { part, token, kept, n } => {
                let d = out.cols();
                let m = kept.len();
                let batch = out.rows() / n;
                let mut is_kept = vec![usize::MAX; *n];
                for (j, &i) in kept.iter().enumerate() {
                    is_kept[i] = j;
                }
                if self.needs(*part) {
                    let dp = acc(grads, *part, batch * m * d);
                    for b in 0..batch {
                        for (j, &i) in kept.iter().enumerate() {
                            let src = &g[(b * n + i) * d..(b * n + i + 1) * d];
                            dp[(b * m + j) * d..(b * m + j + 1) * d]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, v)| *a += v);
                        }
                    }
                }
                if self.needs(*token) {
                    let dt = acc(grads, *token, d);
                    for b in 0..batch {
                        for i in (0..*n).filter(|&i| is_kept[i] == usize::MAX) {
                            let src = &g[(b * n + i) * d..(b * n + i + 1) * d];
                            dt.iter_mut().zip(src).for_each(|(a, v)| *a += v);
                        }
                    }
                }
            }
            Op::BatchTranspose { x, batch } => {
                let (r, d) = self.dims(*x);
                let n = r / batch;
                let dx = acc(grads, *x, r * d);
                for b in 0..*batch {
                    for i in 0..n {
                        for c in 0..d {
                            dx[(b * n + i) * d + c] += g[(b * d + c) * n + i];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                acc(grads, *x, len).iter_mut().for_each(|a| *a += g[0]);
            }
            Op::RowSum(x) => {
                let (r, c) = self.dims(*x);
                let dx = acc(grads, *x, r * c);
                for i in 0..r {
                    dx[i * c..(i + 1) * c].iter_mut().for_each(|a| *a += g[i]);
                }
            }
            Op::GateRows { x, scores } => {
                let c = out.cols();
                if self.needs(*x) {
                    acc(grads, *x, g.len()).iter_mut().zip(g).for_each(|(a, v)| *a += v);
                }
                if self.needs(*scores) {
                    let xv = self.value(*x).data();
                    let ds = acc(grads, *scores, out.rows());
                    for r in 0..out.rows() {
                        ds[r] += (0..c).map(|j| g[r * c + j] * xv[r * c + j]).sum::<f64>();
                    }
                }
            }
            Op::RowNormalize { x, norms } => {
                let c = out.cols();
                let dx = acc(grads, *x, g.len());
                for (r, nrm) in norms.iter().enumerate() {
                    let y = &out.data()[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[r * c + j] += (gr[j] - y[j] * dot) / nrm;
                    }
                }
            }
            Op::SubbandGram { x, n_rx, n_tx, per_band } => {
                let (n_rx, n_tx, per_band) = (*n_rx, *n_tx, *per_band);
                let (rows, dt) = self.dims(*x);
                let w = 2 * n_tx;
                let h = 2 * n_rx;
                let off = n_rx * n_tx;
                let xv = self.value(*x).data();
                let dx = acc(grads, *x, rows * dt);
                let mut emb = vec![0.0; h * w];
                let mut sym = vec![0.0; w * w];
                let mut demb = vec![0.0; h * w];
                for s in 0..rows / per_band {
                    let gb = &g[s * w * w..(s + 1) * w * w];
                    for i in 0..w {
                        for j in 0..w {
                            sym[i * w + j] = (gb[i * w + j] + gb[j * w + i]) / per_band as f64;
                        }
                    }
                    for k in 0..per_band {
                        let row = s * per_band + k;
                        real_embedding(&xv[row * dt..(row + 1) * dt], n_rx, n_tx, &mut emb);
                        gemm(h, w, w, &emb, false, &sym, false, &mut demb, 0.0);
                        let dtok = &mut dx[row * dt..(row + 1) * dt];
                        for r in 0..n_rx {
                            for t in 0..n_tx {
                                dtok[r * n_tx + t] += demb[r * w + t] + demb[(n_rx + r) * w + n_tx + t];
                                dtok[off + r * n_tx + t] += demb[(n_rx + r) * w + t] - demb[r * w + n_tx + t];
                            }
                        }
                    }
                }
            }
            Op::BlockMatVec { g: gm, v } => {
                let (m, n) = self.dims(*v);
                let (gv, vv) = (self.value(*gm).data(), self.value(*v).data());
                if self.needs(*gm) {
                    let dg = acc(grads, *gm, m * n * n);
                    for b in 0..m {
                        for i in 0..n {
                            for j in 0..n {
                                dg[b * n * n + i * n + j] += g[b * n + i] * vv[b * n + j];
                            }
                        }
                    }
                }
                if self.needs(*v) {
                    let dv = acc(grads, *v, m * n);
                    for b in 0..m {
                        for i in 0..n {
                            for j in 0..n {
                                dv[b * n + j] += gv[b * n * n + i * n + j] * g[b * n + i];
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        probs: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (rows, d) = self.dims(q);
        let n = rows / batch;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut ds = vec![0.0; n * n];
        for b in 0..batch {
            for h in 0..heads {
                let p = &probs[(b * heads + h) * n * n..(b * heads + h + 1) * n * n];
                let c0 = h * dh;
                let at = |i: usize| (b * n + i) * d + c0;
                // dP and dV
                for i in 0..n {
                    let go = &g[at(i)..at(i) + dh];
                    for j in 0..n {
                        let vj = &vv[at(j)..at(j) + dh];
                        ds[i * n + j] = go.iter().zip(vj).map(|(x, y)| x * y).sum();
                        let w = p[i * n + j];
                        if w != 0.0 {
                            dv[at(j)..at(j) + dh].iter_mut().zip(go).for_each(|(a, x)| *a += w * x);
                        }
                    }
                }
                // softmax adjoint, then the 1/sqrt(d) factor
                for i in 0..n {
                    let pr = &p[i * n..(i + 1) * n];
                    let dr = &mut ds[i * n..(i + 1) * n];
                    let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = pr[j] * (dr[j] - dot) * scale;
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        let s = ds[i * n + j];
                        if s == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            dq[at(i) + c] += s * kv[at(j) + c];
                            dk[at(j) + c] += s * qv[at(i) + c];
                        }
                    }
                }
            }
        }
        for (var, d) in [(q, dq), (k, dk), (v, dv)] {
            if self.needs(var) {
                acc(grads, var, rows * self.dims(var).1).iter_mut().zip(&d).for_each(|(a, x)| *a += x);
            }
        }
    }
}
