//! Tape-based reverse-mode differentiation over matrix primitives.
//!
//! A [`Graph`] records every primitive applied to its [`Var`]s. Parameters
//! pulled from a [`ParamStore`] become differentiable leaves; everything else
//! is a constant. [`Graph::backward`] walks the tape in reverse and adds the
//! resulting gradients into the store, so successive calls accumulate until
//! the caller zeroes them.

use std::collections::HashMap;

use crate::error::{NdError, Result};
use crate::params::ParamStore;
use crate::tensor::{matmul_raw, transpose_raw, Tensor};

/// Variance floor for [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-10;
/// Norm floor for [`Graph::row_l2_normalize`]; rows below it are scaled, not normalized.
pub const NORM_FLOOR: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    RowSoftmax(Var),
    RowLogSoftmax(Var),
    LayerNorm(Var),
    Gelu(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    ColMean(Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Log(Var),
    Exp(Var),
    Gather(Var, Vec<usize>),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    RowL2Normalize(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
    params: HashMap<String, Var>,
}

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn add_into(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn add_into_owned(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl Graph {
    /// A graph that records operations for differentiation.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
            params: HashMap::new(),
        }
    }

    /// A graph that only evaluates; parameters enter as constants.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
            params: HashMap::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
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
        &self.nodes[v.0].value.shape
    }

    /// Whether gradients would flow back into `v`.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, mut value: Tensor, op: Op, operands: &[Var]) -> Var {
        let needs_grad = self.record && operands.iter().any(|o| self.nodes[o.0].needs_grad);
        value.requires_grad = needs_grad;
        value.grad = None;
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Pulls a named parameter onto the tape. Repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| NdError::MissingParam(name.to_string()))?;
        let mut value = t.clone();
        value.grad = None;
        value.requires_grad = self.record;
        self.nodes.push(Node {
            value,
            op: if self.record {
                Op::Param(name.to_string())
            } else {
                Op::Leaf
            },
            needs_grad: self.record,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims(op)
    }

    fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(usize, usize)> {
        let da = self.dims(a, op)?;
        let db = self.dims(b, op)?;
        if da != db {
            return Err(NdError::ShapeMismatch {
                op,
                lhs: vec![da.0, da.1],
                rhs: vec![db.0, db.1],
            });
        }
        Ok(da)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = &self.nodes[a.0].value;
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&x| f(x)).collect(),
            requires_grad: false,
            grad: None,
        };
        self.push(value, op, &[a])
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, name)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(Tensor::matrix(r, c, data)?, op, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(NdError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let data = matmul_raw(self.data(a), self.data(b), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "transpose")?;
        let data = transpose_raw(self.data(a), m, n);
        Ok(self.push(Tensor::matrix(n, m, data)?, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Minimum(a, b), "minimum", f64::min)
    }

    fn row_broadcast(&mut self, a: Var, row: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (m, n) = self.dims(a, name)?;
        let (r, c) = self.dims(row, name)?;
        if r != 1 || c != n {
            return Err(NdError::ShapeMismatch {
                op: name,
                lhs: vec![m, n],
                rhs: vec![r, c],
            });
        }
        let rv = self.data(row);
        let data = self
            .data(a)
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| f(x, y)))
            .collect();
        Ok(self.push(Tensor::matrix(m, n, data)?, op, &[a, row]))
    }

    /// `a + row` with `row` (1 x n) added to every row of `a` (m x n).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, Op::AddRow(a, row), "add_row", |x, y| x + y)
    }

    /// `a * row` elementwise per row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, Op::MulRow(a, row), "mul_row", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, Op::Gelu(a), gelu)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "row_softmax")?;
        let mut data = self.data(a).to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::RowSoftmax(a), &[a]))
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "row_log_softmax")?;
        let mut data = self.data(a).to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::RowLogSoftmax(a), &[a]))
    }

    /// Row-wise standardization (no gain or bias).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "layer_norm")?;
        let mut data = self.data(a).to_vec();
        for row in data.chunks_mut(n) {
            let (mean, inv) = row_stats(row);
            row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
        }
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::LayerNorm(a), &[a]))
    }

    /// Scales each row to unit Euclidean length.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "row_l2_normalize")?;
        let mut data = self.data(a).to_vec();
        for row in data.chunks_mut(n) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
            row.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::RowL2Normalize(a), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(NdError::Empty { op: "concat_cols" })?;
        let (m, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p, "concat_cols")?;
            if r != m {
                return Err(NdError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: vec![r, c],
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::matrix(m, total, data)?, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(NdError::Empty { op: "concat_rows" })?;
        let (_, n) = self.dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p, "concat_rows")?;
            if c != n {
                return Err(NdError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: vec![r, c],
                });
            }
            rows += r;
            data.extend_from_slice(self.data(p));
        }
        Ok(self.push(Tensor::matrix(rows, n, data)?, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a, "slice_cols")?;
        if start >= end || end > n {
            return Err(NdError::Index {
                op: "slice_cols",
                index: end,
                extent: n,
            });
        }
        let w = end - start;
        let src = self.data(a);
        let data = (0..m)
            .flat_map(|i| src[i * n + start..i * n + end].iter().copied())
            .collect();
        Ok(self.push(Tensor::matrix(m, w, data)?, Op::SliceCols(a, start), &[a]))
    }

    /// Mean over rows: m x n -> 1 x n.
    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "col_mean")?;
        let mut data = vec![0.0; n];
        for row in self.data(a).chunks(n) {
            data.iter_mut().zip(row).for_each(|(d, x)| *d += x);
        }
        data.iter_mut().for_each(|d| *d /= m as f64);
        Ok(self.push(Tensor::matrix(1, n, data)?, Op::ColMean(a), &[a]))
    }

    /// Sum across each row: m x n -> m x 1.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "row_sum")?;
        let data = self.data(a).chunks(n).map(|r| r.iter().sum()).collect();
        Ok(self.push(Tensor::matrix(m, 1, data)?, Op::RowSum(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Picks `a[i, index[i]]` for every row: m x n -> m x 1.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a, "gather")?;
        if index.len() != m {
            return Err(NdError::ShapeMismatch {
                op: "gather",
                lhs: vec![m, n],
                rhs: vec![index.len(), 1],
            });
        }
        if let Some(&bad) = index.iter().find(|&&j| j >= n) {
            return Err(NdError::Index {
                op: "gather",
                index: bad,
                extent: n,
            });
        }
        let src = self.data(a);
        let data = index.iter().enumerate().map(|(i, &j)| src[i * n + j]).collect();
        Ok(self.push(Tensor::matrix(m, 1, data)?, Op::Gather(a, index.to_vec()), &[a]))
    }

    /// Reverse pass from a scalar `loss`, adding `d loss / d p` into every
    /// parameter of `store` that was pulled onto this tape.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let shape = &self.nodes[loss.0].value.shape;
        if shape.iter().product::<usize>() != 1 {
            return Err(NdError::NonScalarLoss(shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Param(name) = &node.op {
                let entry = store
                    .get_mut(name)
                    .ok_or_else(|| NdError::MissingParam(name.clone()))?;
                add_into(&mut entry.grad, &g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value.data;
        let (m, n) = (node.value.rows(), node.value.cols());
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (_, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                if self.wants(*a) {
                    let bt = transpose_raw(self.data(*b), k, n);
                    add_into_owned(&mut grads[a.0], matmul_raw(g, &bt, m, n, k));
                }
                if self.wants(*b) {
                    let at = transpose_raw(self.data(*a), m, k);
                    add_into_owned(&mut grads[b.0], matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    add_into_owned(&mut grads[a.0], transpose_raw(g, m, n));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.wants(*b) {
                    add_into_owned(&mut grads[b.0], g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                if self.wants(*a) {
                    add_into_owned(&mut grads[a.0], g.iter().zip(db).map(|(x, y)| x * y).collect());
                }
                if self.wants(*b) {
                    add_into_owned(&mut grads[b.0], g.iter().zip(da).map(|(x, y)| x * y).collect());
                }
            }
            Op::Minimum(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let pick_a: Vec<bool> = da.iter().zip(db).map(|(x, y)| x <= y).collect();
                if self.wants(*a) {
                    let ga = g.iter().zip(&pick_a).map(|(&x, &p)| if p { x } else { 0.0 }).collect();
                    add_into_owned(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let gb = g.iter().zip(&pick_a).map(|(&x, &p)| if p { 0.0 } else { x }).collect();
                    add_into_owned(&mut grads[b.0], gb);
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.wants(*row) {
                    let mut gr = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(s, x)| *s += x);
                    }
                    add_into_owned(&mut grads[row.0], gr);
                }
            }
            Op::MulRow(a, row) => {
                let (da, dr) = (self.data(*a), self.data(*row));
                if self.wants(*a) {
                    let ga = g
                        .chunks(n)
                        .flat_map(|chunk| chunk.iter().zip(dr).map(|(x, y)| x * y))
                        .collect();
                    add_into_owned(&mut grads[a.0], ga);
                }
                if self.wants(*row) {
                    let mut gr = vec![0.0; n];
                    for (gc, ac) in g.chunks(n).zip(da.chunks(n)) {
                        for j in 0..n {
                            gr[j] += gc[j] * ac[j];
                        }
                    }
                    add_into_owned(&mut grads[row.0], gr);
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    add_into_owned(&mut grads[a.0], g.iter().map(|x| x * s).collect());
                }
            }
            Op::Tanh(a) => {
                if self.wants(*a) {
                    let ga = g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect();
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let ga = g
                        .iter()
                        .zip(self.data(*a))
                        .map(|(x, &z)| if z > 0.0 { *x } else { 0.0 })
                        .collect();
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::Gelu(a) => {
                if self.wants(*a) {
                    let ga = g.iter().zip(self.data(*a)).map(|(x, &z)| x * gelu_grad(z)).collect();
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::Log(a) => {
                if self.wants(*a) {
                    let ga = g.iter().zip(self.data(*a)).map(|(x, z)| x / z).collect();
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::Exp(a) => {
                if self.wants(*a) {
                    let ga = g.iter().zip(out).map(|(x, y)| x * y).collect();
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::Clamp(a, lo, hi) => {
                if self.wants(*a) {
                    let ga = g
                        .iter()
                        .zip(self.data(*a))
                        .map(|(x, &z)| if z >= *lo && z <= *hi { *x } else { 0.0 })
                        .collect();
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::RowSoftmax(a) => {
                if self.wants(*a) {
                    let mut ga = Vec::with_capacity(m * n);
                    for (gr, yr) in g.chunks(n).zip(out.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        ga.extend(gr.iter().zip(yr).map(|(x, y)| y * (x - dot)));
                    }
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::RowLogSoftmax(a) => {
                if self.wants(*a) {
                    let mut ga = Vec::with_capacity(m * n);
                    for (gr, yr) in g.chunks(n).zip(out.chunks(n)) {
                        let total: f64 = gr.iter().sum();
                        ga.extend(gr.iter().zip(yr).map(|(x, y)| x - y.exp() * total));
                    }
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::LayerNorm(a) => {
                if self.wants(*a) {
                    let mut ga = Vec::with_capacity(m * n);
                    for ((gr, yr), xr) in g.chunks(n).zip(out.chunks(n)).zip(self.data(*a).chunks(n)) {
                        let (_, inv) = row_stats(xr);
                        let mg = gr.iter().sum::<f64>() / n as f64;
                        let mgy = gr.iter().zip(yr).map(|(x, y)| x * y).sum::<f64>() / n as f64;
                        ga.extend(gr.iter().zip(yr).map(|(x, y)| inv * (x - mg - y * mgy)));
                    }
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::RowL2Normalize(a) => {
                if self.wants(*a) {
                    let mut ga = Vec::with_capacity(m * n);
                    for ((gr, yr), xr) in g.chunks(n).zip(out.chunks(n)).zip(self.data(*a).chunks(n)) {
                        let norm = xr.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm > NORM_FLOOR {
                            let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                            ga.extend(gr.iter().zip(yr).map(|(x, y)| (x - y * dot) / norm));
                        } else {
                            ga.extend(gr.iter().map(|x| x / NORM_FLOOR));
                        }
                    }
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.cols();
                    if self.wants(*p) {
                        let gp = (0..m)
                            .flat_map(|r| g[r * n + offset..r * n + offset + w].iter().copied())
                            .collect();
                        add_into_owned(&mut grads[p.0], gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if self.wants(*p) {
                        add_into(&mut grads[p.0], &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                if self.wants(*a) {
                    let src_cols = self.nodes[a.0].value.cols();
                    let mut ga = vec![0.0; m * src_cols];
                    for r in 0..m {
                        ga[r * src_cols + start..r * src_cols + start + n].copy_from_slice(&g[r * n..(r + 1) * n]);
                    }
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::ColMean(a) => {
                if self.wants(*a) {
                    let rows = self.nodes[a.0].value.rows();
                    let ga = (0..rows)
                        .flat_map(|_| g.iter().map(move |x| x / rows as f64))
                        .collect();
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::RowSum(a) => {
                if self.wants(*a) {
                    let cols = self.nodes[a.0].value.cols();
                    let ga = g.iter().flat_map(|&x| std::iter::repeat_n(x, cols)).collect();
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let len = self.nodes[a.0].value.len();
                    add_into_owned(&mut grads[a.0], vec![g[0]; len]);
                }
            }
            Op::Mean(a) => {
                if self.wants(*a) {
                    let len = self.nodes[a.0].value.len();
                    add_into_owned(&mut grads[a.0], vec![g[0] / len as f64; len]);
                }
            }
            Op::Gather(a, index) => {
                if self.wants(*a) {
                    let cols = self.nodes[a.0].value.cols();
                    let mut ga = vec![0.0; index.len() * cols];
                    for (r, &j) in index.iter().enumerate() {
                        ga[r * cols + j] = g[r];
                    }
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
        }
    }
}

/// Row mean and inverse standard deviation used by layer norm.
fn row_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}
