//! Dense 2-D tensors with reverse-mode differentiation on a recording tape.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. [`Var`]s are
//! cheap handles into the tape; operations record a node with enough context
//! to replay an exact backward rule. Calling [`Tape::backward`] on a scalar
//! walks the tape once in reverse and accumulates gradients for every leaf
//! that asked for them. A tape is single-use: a second backward call without
//! a fresh tape is an error.
//!
//! The primitive set is deliberately small — dense matmul and elementwise
//! ops, a few structural ops (gather, concat, slice), sparse graph operators,
//! and one fused per-node block-orthogonal application used by bundle
//! synchronization.

pub mod grad_check;
#[cfg(test)]
mod tests;

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Handle to a value recorded on a tape. Cloning is cheap (an `Rc` bump and
/// an index copy).
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    idx: usize,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRowBroadcast(usize, usize),
    Sub(usize, usize),
    ScalarMul(usize, f64),
    Hadamard(usize, usize),
    RowGather(usize, Vec<usize>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SelectCols(usize, usize, usize),
    Reshape(usize),
    Transpose(usize),
    ReduceSum(usize),
    ScaleBy(usize, usize),
    DivByScalar(usize, usize),
    Recip(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Gelu(usize),
    Tanh(usize),
    Sin(usize),
    Cos(usize),
    MseLoss(usize, Array2<f64>),
    SoftmaxCrossEntropy(usize, Vec<usize>),
    LapRwApply(usize, Rc<Graph>),
    AdjSumApply(usize, Rc<Graph>),
    BundleApply {
        maps: usize,
        x: usize,
        bundles: usize,
        dim: usize,
        channels: usize,
        transpose: bool,
    },
    MaskedRowSoftmax(usize, Rc<Graph>),
}

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
struct TapeInner {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Recording tape for one forward/backward pass.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<TapeInner>,
}

/// Gradients of the recorded scalar with respect to tape leaves.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`. Zero for tensors that never
    /// required a gradient.
    pub fn get(&self, var: &Var) -> Array2<f64> {
        self.grads[var.idx].clone().unwrap_or_else(|| {
            let (r, c) = var.shape();
            Array2::zeros((r, c))
        })
    }

    /// Like [`Gradients::get`] but moves the gradient out, avoiding a copy.
    /// Subsequent calls for the same variable return zeros.
    pub fn take(&mut self, var: &Var) -> Array2<f64> {
        self.grads[var.idx].take().unwrap_or_else(|| {
            let (r, c) = var.shape();
            Array2::zeros((r, c))
        })
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn shape(&self, idx: usize) -> (usize, usize) {
        let nodes = self.inner.nodes.borrow();
        let v = &nodes[idx].value;
        (v.nrows(), v.ncols())
    }

    // Non-finite values are allowed on the tape: training surfaces them as
    // divergence errors instead of crashing mid-forward.
    fn push(&self, value: Array2<f64>, requires_grad: bool, op: Op) -> Var {
        let mut nodes = self.inner.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var {
            tape: self.clone(),
            idx: nodes.len() - 1,
        }
    }

    fn any_grad(&self, indices: &[usize]) -> bool {
        let nodes = self.inner.nodes.borrow();
        indices.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Records a differentiable leaf (a parameter or an input under test).
    pub fn leaf(&self, value: Array2<f64>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Records a constant; no gradient will flow into it.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse pass from a scalar. Consumes the tape's one backward budget.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if self.inner.consumed.get() {
            return Err(Error::ShapeMismatch(
                "tape already consumed by a previous backward call".into(),
            ));
        }
        let (r, c) = self.shape(loss.idx);
        if (r, c) != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        self.inner.consumed.set(true);
        let mut nodes = self.inner.nodes.borrow_mut();
        nodes[loss.idx].grad = Some(Array2::ones((1, 1)));
        for i in (0..nodes.len()).rev() {
            if nodes[i].grad.is_none() || !nodes[i].requires_grad {
                continue;
            }
            backward_step(&mut nodes, i);
        }
        let grads = nodes.iter_mut().map(|n| n.grad.take()).collect();
        Ok(Gradients { grads })
    }
}

fn accum(nodes: &mut [Node], idx: usize, delta: Array2<f64>) {
    if !nodes[idx].requires_grad {
        return;
    }
    match nodes[idx].grad.as_mut() {
        Some(g) => *g += &delta,
        None => nodes[idx].grad = Some(delta),
    }
}

fn accum_ref(nodes: &mut [Node], idx: usize, delta: &Array2<f64>) {
    if !nodes[idx].requires_grad {
        return;
    }
    match nodes[idx].grad.as_mut() {
        Some(g) => *g += delta,
        None => nodes[idx].grad = Some(delta.clone()),
    }
}

// Inputs of an op always precede it on the tape, so splitting the node
// slice at `i` lets the backward rule read the output node and its input
// values by reference while accumulating into earlier gradients, without
// cloning any arrays.
fn backward_step(nodes: &mut [Node], i: usize) {
    let (prev, rest) = nodes.split_at_mut(i);
    let node = &rest[0];
    let g = node.grad.as_ref().unwrap();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            let da = g.dot(&prev[b].value.t());
            let db = prev[a].value.t().dot(g);
            accum(prev, a, da);
            accum(prev, b, db);
        }
        Op::Add(a, b) => {
            let (a, b) = (*a, *b);
            accum_ref(prev, a, g);
            accum_ref(prev, b, g);
        }
        Op::AddRowBroadcast(a, b) => {
            let (a, b) = (*a, *b);
            let col_sums = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
            accum_ref(prev, a, g);
            accum(prev, b, col_sums);
        }
        Op::Sub(a, b) => {
            let (a, b) = (*a, *b);
            accum_ref(prev, a, g);
            accum(prev, b, -g);
        }
        Op::ScalarMul(a, s) => {
            let (a, s) = (*a, *s);
            accum(prev, a, g * s);
        }
        Op::Hadamard(a, b) => {
            let (a, b) = (*a, *b);
            let da = g * &prev[b].value;
            let db = g * &prev[a].value;
            accum(prev, a, da);
            accum(prev, b, db);
        }
        Op::RowGather(a, rows) => {
            let a = *a;
            let (ar, ac) = (prev[a].value.nrows(), prev[a].value.ncols());
            let mut d = Array2::zeros((ar, ac));
            for (out_row, &src) in rows.iter().enumerate() {
                for j in 0..ac {
                    d[[src, j]] += g[[out_row, j]];
                }
            }
            accum(prev, a, d);
        }
        Op::ConcatCols(parts) => {
            let mut start = 0;
            for &p in parts {
                let w = prev[p].value.ncols();
                let slice = g.slice(s![.., start..start + w]).to_owned();
                accum(prev, p, slice);
                start += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut start = 0;
            for &p in parts {
                let h = prev[p].value.nrows();
                let slice = g.slice(s![start..start + h, ..]).to_owned();
                accum(prev, p, slice);
                start += h;
            }
        }
        Op::SelectCols(a, start, end) => {
            let (a, start, end) = (*a, *start, *end);
            let (ar, ac) = (prev[a].value.nrows(), prev[a].value.ncols());
            let mut d = Array2::zeros((ar, ac));
            d.slice_mut(s![.., start..end]).assign(g);
            accum(prev, a, d);
        }
        Op::Reshape(a) => {
            let a = *a;
            let (ar, ac) = (prev[a].value.nrows(), prev[a].value.ncols());
            let flat: Vec<f64> = g.iter().cloned().collect();
            let d = Array2::from_shape_vec((ar, ac), flat).unwrap();
            accum(prev, a, d);
        }
        Op::Transpose(a) => {
            let a = *a;
            accum(prev, a, g.t().to_owned());
        }
        Op::ReduceSum(a) => {
            let a = *a;
            let (ar, ac) = (prev[a].value.nrows(), prev[a].value.ncols());
            accum(prev, a, Array2::from_elem((ar, ac), g[[0, 0]]));
        }
        Op::ScaleBy(a, sidx) => {
            let (a, sidx) = (*a, *sidx);
            let sv = prev[sidx].value[[0, 0]];
            let da = g * sv;
            let ds = (g * &prev[a].value).sum();
            accum(prev, a, da);
            accum(prev, sidx, Array2::from_elem((1, 1), ds));
        }
        Op::DivByScalar(a, sidx) => {
            let (a, sidx) = (*a, *sidx);
            let sv = prev[sidx].value[[0, 0]];
            let da = g / sv;
            let ds = -(g * &prev[a].value).sum() / (sv * sv);
            accum(prev, a, da);
            accum(prev, sidx, Array2::from_elem((1, 1), ds));
        }
        Op::Recip(a) => {
            let a = *a;
            let d = g * &node.value.mapv(|v| -v * v);
            accum(prev, a, d);
        }
        Op::Relu(a) => {
            let a = *a;
            let d = g * &prev[a].value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            accum(prev, a, d);
        }
        Op::LeakyRelu(a, slope) => {
            let (a, slope) = (*a, *slope);
            let d = g * &prev[a].value.mapv(|v| if v > 0.0 { 1.0 } else { slope });
            accum(prev, a, d);
        }
        Op::Gelu(a) => {
            let a = *a;
            let d = g * &prev[a].value.mapv(gelu_derivative);
            accum(prev, a, d);
        }
        Op::Tanh(a) => {
            let a = *a;
            let d = g * &node.value.mapv(|v| 1.0 - v * v);
            accum(prev, a, d);
        }
        Op::Sin(a) => {
            let a = *a;
            let d = g * &prev[a].value.mapv(f64::cos);
            accum(prev, a, d);
        }
        Op::Cos(a) => {
            let a = *a;
            let d = g * &prev[a].value.mapv(|v| -v.sin());
            accum(prev, a, d);
        }
        Op::MseLoss(a, target) => {
            let a = *a;
            let av = &prev[a].value;
            let count = av.len() as f64;
            let d = (av - target) * (2.0 / count) * g[[0, 0]];
            accum(prev, a, d);
        }
        Op::SoftmaxCrossEntropy(a, targets) => {
            let a = *a;
            let av = &prev[a].value;
            let rows = av.nrows() as f64;
            let mut d = softmax_rows(av);
            for (r, &t) in targets.iter().enumerate() {
                d[[r, t]] -= 1.0;
            }
            accum(prev, a, d * (g[[0, 0]] / rows));
        }
        Op::LapRwApply(a, graph) => {
            let a = *a;
            // (𝓛ᵀ G)_v = G_v − Σ_{u∈N(v)} G_u / d_u
            let mut d = g.clone();
            let c = g.ncols();
            for v in 0..graph.node_count() {
                for &u in graph.neighbors(v) {
                    let inv = 1.0 / graph.degree(u) as f64;
                    for j in 0..c {
                        d[[v, j]] -= inv * g[[u, j]];
                    }
                }
            }
            accum(prev, a, d);
        }
        Op::AdjSumApply(a, graph) => {
            let a = *a;
            let d = crate::graph::adjacency_sum_apply(graph, g).unwrap();
            accum(prev, a, d);
        }
        Op::BundleApply {
            maps,
            x,
            bundles,
            dim,
            channels,
            transpose,
        } => {
            let (maps, x, b, d, p, tr) = (*maps, *x, *bundles, *dim, *channels, *transpose);
            let mv = &prev[maps].value;
            let xv = &prev[x].value;
            let n = xv.nrows();
            let mut dmaps = Array2::zeros((n, b * d * d));
            let mut dx = Array2::zeros((n, b * d * p));
            for v in 0..n {
                for bi in 0..b {
                    let mbase = bi * d * d;
                    for ch in 0..p {
                        let xbase = bi * d * p + ch * d;
                        for r in 0..d {
                            let gr = g[[v, xbase + r]];
                            for cidx in 0..d {
                                let o = mv[[v, mbase + r * d + cidx]];
                                let ot = mv[[v, mbase + cidx * d + r]];
                                let xc = xv[[v, xbase + cidx]];
                                if tr {
                                    // y = Oᵀ x: dX = O g, dO_{cr} += x_c g_r
                                    dx[[v, xbase + cidx]] += ot * gr;
                                    dmaps[[v, mbase + cidx * d + r]] += xc * gr;
                                } else {
                                    // y = O x: dX = Oᵀ g, dO_{rc} += g_r x_c
                                    dx[[v, xbase + cidx]] += o * gr;
                                    dmaps[[v, mbase + r * d + cidx]] += gr * xc;
                                }
                            }
                        }
                    }
                }
            }
            accum(prev, maps, dmaps);
            accum(prev, x, dx);
        }
        Op::MaskedRowSoftmax(a, graph) => {
            let a = *a;
            let y = &node.value;
            let n = y.nrows();
            let mut d = Array2::zeros((n, n));
            for u in 0..n {
                let mut dot = 0.0;
                for &v in graph.neighbors(u) {
                    dot += y[[u, v]] * g[[u, v]];
                }
                for &v in graph.neighbors(u) {
                    d[[u, v]] = y[[u, v]] * (g[[u, v]] - dot);
                }
            }
            accum(prev, a, d);
        }
    }
}

fn gelu_value(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl Var {
    /// The tape this value lives on.
    pub fn tape(&self) -> Tape {
        self.tape.clone()
    }

    pub fn value(&self) -> Array2<f64> {
        self.tape.inner.nodes.borrow()[self.idx].value.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.shape(self.idx)
    }

    fn same_shape(&self, other: &Var, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let (_, k1) = self.shape();
        let (k2, _) = other.shape();
        if k1 != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let value = self.value().dot(&other.value());
        let rg = self.tape.any_grad(&[self.idx, other.idx]);
        Ok(self.tape.push(value, rg, Op::MatMul(self.idx, other.idx)))
    }

    /// Elementwise add; a 1×c right operand broadcasts over rows.
    pub fn add(&self, other: &Var) -> Result<Var> {
        let rg = self.tape.any_grad(&[self.idx, other.idx]);
        let (r, c) = self.shape();
        let (or, oc) = other.shape();
        if or == 1 && r != 1 && oc == c {
            let value = &self.value() + &other.value().row(0);
            return Ok(self
                .tape
                .push(value, rg, Op::AddRowBroadcast(self.idx, other.idx)));
        }
        self.same_shape(other, "add")?;
        let value = &self.value() + &other.value();
        Ok(self.tape.push(value, rg, Op::Add(self.idx, other.idx)))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.same_shape(other, "sub")?;
        let value = &self.value() - &other.value();
        let rg = self.tape.any_grad(&[self.idx, other.idx]);
        Ok(self.tape.push(value, rg, Op::Sub(self.idx, other.idx)))
    }

    pub fn scalar_mul(&self, s: f64) -> Var {
        let value = self.value() * s;
        let rg = self.tape.any_grad(&[self.idx]);
        self.tape.push(value, rg, Op::ScalarMul(self.idx, s))
    }

    pub fn hadamard(&self, other: &Var) -> Result<Var> {
        self.same_shape(other, "hadamard")?;
        let value = &self.value() * &other.value();
        let rg = self.tape.any_grad(&[self.idx, other.idx]);
        Ok(self.tape.push(value, rg, Op::Hadamard(self.idx, other.idx)))
    }

    pub fn row_gather(&self, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.shape();
        if let Some(&bad) = rows.iter().find(|&&v| v >= r) {
            return Err(Error::NodeOutOfRange(bad, r));
        }
        let src = self.value();
        let mut value = Array2::zeros((rows.len(), c));
        for (i, &row) in rows.iter().enumerate() {
            value.row_mut(i).assign(&src.row(row));
        }
        let rg = self.tape.any_grad(&[self.idx]);
        Ok(self
            .tape
            .push(value, rg, Op::RowGather(self.idx, rows.to_vec())))
    }

    pub fn select_cols(&self, start: usize, end: usize) -> Result<Var> {
        let (_, c) = self.shape();
        if start >= end || end > c {
            return Err(Error::ShapeMismatch(format!(
                "select_cols {start}..{end} out of {c}"
            )));
        }
        let value = self.value().slice(s![.., start..end]).to_owned();
        let rg = self.tape.any_grad(&[self.idx]);
        Ok(self
            .tape
            .push(value, rg, Op::SelectCols(self.idx, start, end)))
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape();
        if r * c != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "reshape {r}x{c} -> {rows}x{cols}"
            )));
        }
        let flat: Vec<f64> = self.value().iter().cloned().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).unwrap();
        let rg = self.tape.any_grad(&[self.idx]);
        Ok(self.tape.push(value, rg, Op::Reshape(self.idx)))
    }

    pub fn transpose(&self) -> Var {
        let value = self.value().t().to_owned();
        let rg = self.tape.any_grad(&[self.idx]);
        self.tape.push(value, rg, Op::Transpose(self.idx))
    }

    pub fn reduce_sum(&self) -> Var {
        let value = Array2::from_elem((1, 1), self.value().sum());
        let rg = self.tape.any_grad(&[self.idx]);
        self.tape.push(value, rg, Op::ReduceSum(self.idx))
    }

    /// Multiplies by a 1×1 tensor scalar.
    pub fn scale_by(&self, s: &Var) -> Result<Var> {
        if s.shape() != (1, 1) {
            return Err(Error::ShapeMismatch("scale_by needs a 1x1 scalar".into()));
        }
        let value = self.value() * s.value()[[0, 0]];
        let rg = self.tape.any_grad(&[self.idx, s.idx]);
        Ok(self.tape.push(value, rg, Op::ScaleBy(self.idx, s.idx)))
    }

    /// Divides by a 1×1 tensor scalar.
    pub fn div_by_scalar(&self, s: &Var) -> Result<Var> {
        if s.shape() != (1, 1) {
            return Err(Error::ShapeMismatch(
                "div_by_scalar needs a 1x1 scalar".into(),
            ));
        }
        let value = self.value() / s.value()[[0, 0]];
        let rg = self.tape.any_grad(&[self.idx, s.idx]);
        Ok(self.tape.push(value, rg, Op::DivByScalar(self.idx, s.idx)))
    }

    /// Elementwise reciprocal. The caller guarantees entries are bounded
    /// away from zero.
    pub fn recip(&self) -> Result<Var> {
        let v = self.value();
        if v.iter().any(|x| x.abs() < 1e-300) {
            return Err(Error::NonFinite("reciprocal of (near-)zero entry"));
        }
        let value = v.mapv(|x| 1.0 / x);
        let rg = self.tape.any_grad(&[self.idx]);
        Ok(self.tape.push(value, rg, Op::Recip(self.idx)))
    }

    pub fn relu(&self) -> Var {
        let value = self.value().mapv(|v| v.max(0.0));
        let rg = self.tape.any_grad(&[self.idx]);
        self.tape.push(value, rg, Op::Relu(self.idx))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let value = self.value().mapv(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.tape.any_grad(&[self.idx]);
        self.tape.push(value, rg, Op::LeakyRelu(self.idx, slope))
    }

    pub fn gelu(&self) -> Var {
        let value = self.value().mapv(gelu_value);
        let rg = self.tape.any_grad(&[self.idx]);
        self.tape.push(value, rg, Op::Gelu(self.idx))
    }

    pub fn tanh(&self) -> Var {
        let value = self.value().mapv(f64::tanh);
        let rg = self.tape.any_grad(&[self.idx]);
        self.tape.push(value, rg, Op::Tanh(self.idx))
    }

    pub fn sin(&self) -> Var {
        let value = self.value().mapv(f64::sin);
        let rg = self.tape.any_grad(&[self.idx]);
        self.tape.push(value, rg, Op::Sin(self.idx))
    }

    pub fn cos(&self) -> Var {
        let value = self.value().mapv(f64::cos);
        let rg = self.tape.any_grad(&[self.idx]);
        self.tape.push(value, rg, Op::Cos(self.idx))
    }

    /// Mean squared error against a constant target, over all entries.
    pub fn mse_loss(&self, target: &Array2<f64>) -> Result<Var> {
        if self.shape() != (target.nrows(), target.ncols()) {
            return Err(Error::ShapeMismatch(format!(
                "mse_loss: {:?} vs {:?}",
                self.shape(),
                (target.nrows(), target.ncols())
            )));
        }
        let diff = &self.value() - target;
        let value = Array2::from_elem((1, 1), diff.mapv(|v| v * v).mean().unwrap());
        let rg = self.tape.any_grad(&[self.idx]);
        Ok(self
            .tape
            .push(value, rg, Op::MseLoss(self.idx, target.clone())))
    }

    /// Mean negative log-likelihood of per-row targets under row softmax.
    pub fn softmax_cross_entropy(&self, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.shape();
        if targets.len() != r {
            return Err(Error::ShapeMismatch(format!(
                "softmax_cross_entropy: {} targets for {r} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::NodeOutOfRange(bad, c));
        }
        let x = self.value();
        let mut loss = 0.0;
        for (row, &t) in x.rows().into_iter().zip(targets.iter()) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let logsum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += logsum - row[t];
        }
        let value = Array2::from_elem((1, 1), loss / r as f64);
        let rg = self.tape.any_grad(&[self.idx]);
        Ok(self.tape.push(
            value,
            rg,
            Op::SoftmaxCrossEntropy(self.idx, targets.to_vec()),
        ))
    }

    /// Sparse random-walk Laplacian action, O(|E|·c).
    pub fn lap_rw_apply(&self, graph: &Rc<Graph>) -> Result<Var> {
        let value = crate::graph::rw_laplacian_apply(graph, &self.value())?;
        let rg = self.tape.any_grad(&[self.idx]);
        Ok(self
            .tape
            .push(value, rg, Op::LapRwApply(self.idx, graph.clone())))
    }

    /// Sparse neighbor-sum action Σ_{u∈N(v)} x_u.
    pub fn adj_sum_apply(&self, graph: &Rc<Graph>) -> Result<Var> {
        let value = crate::graph::adjacency_sum_apply(graph, &self.value())?;
        let rg = self.tape.any_grad(&[self.idx]);
        Ok(self
            .tape
            .push(value, rg, Op::AdjSumApply(self.idx, graph.clone())))
    }

    /// Applies per-node, per-bundle d×d maps to a bundle-major signal.
    ///
    /// `maps` is n×(b·d·d) with node v's bundle-i map flattened row-major at
    /// columns `i·d²..`; `self` is n×(b·d·p) with bundle i's channel ch at
    /// columns `i·d·p + ch·d ..`. With `transpose` the map transposes are
    /// applied instead (desynchronization).
    pub fn bundle_apply(
        &self,
        maps: &Var,
        bundles: usize,
        dim: usize,
        channels: usize,
        transpose: bool,
    ) -> Result<Var> {
        let (n, c) = self.shape();
        let (mn, mc) = maps.shape();
        if c != bundles * dim * channels {
            return Err(Error::ShapeMismatch(format!(
                "bundle_apply: signal width {c} != b*d*p = {}",
                bundles * dim * channels
            )));
        }
        if mn != n || mc != bundles * dim * dim {
            return Err(Error::ShapeMismatch(format!(
                "bundle_apply: maps {mn}x{mc}, expected {n}x{}",
                bundles * dim * dim
            )));
        }
        let mv = maps.value();
        let xv = self.value();
        let mut value = Array2::zeros((n, c));
        for v in 0..n {
            for bi in 0..bundles {
                let mbase = bi * dim * dim;
                for ch in 0..channels {
                    let xbase = bi * dim * channels + ch * dim;
                    for r in 0..dim {
                        let mut acc = 0.0;
                        for k in 0..dim {
                            let o = if transpose {
                                mv[[v, mbase + k * dim + r]]
                            } else {
                                mv[[v, mbase + r * dim + k]]
                            };
                            acc += o * xv[[v, xbase + k]];
                        }
                        value[[v, xbase + r]] = acc;
                    }
                }
            }
        }
        let rg = self.tape.any_grad(&[self.idx, maps.idx]);
        Ok(self.tape.push(
            value,
            rg,
            Op::BundleApply {
                maps: maps.idx,
                x: self.idx,
                bundles,
                dim,
                channels,
                transpose,
            },
        ))
    }

    /// Softmax of each row restricted to that node's neighborhood; entries
    /// outside the neighborhood are zero. Input and output are n×n.
    pub fn masked_row_softmax(&self, graph: &Rc<Graph>) -> Result<Var> {
        let (r, c) = self.shape();
        let n = graph.node_count();
        if r != n || c != n {
            return Err(Error::ShapeMismatch(format!(
                "masked_row_softmax: {r}x{c} scores for {n} nodes"
            )));
        }
        let x = self.value();
        let mut value = Array2::zeros((n, n));
        for u in 0..n {
            let max = graph
                .neighbors(u)
                .iter()
                .map(|&v| x[[u, v]])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &v in graph.neighbors(u) {
                let e = (x[[u, v]] - max).exp();
                value[[u, v]] = e;
                sum += e;
            }
            for &v in graph.neighbors(u) {
                value[[u, v]] /= sum;
            }
        }
        let rg = self.tape.any_grad(&[self.idx]);
        Ok(self
            .tape
            .push(value, rg, Op::MaskedRowSoftmax(self.idx, graph.clone())))
    }

    /// Concatenates columns of several same-height tensors.
    pub fn concat_cols(parts: &[Var]) -> Result<Var> {
        let tape = parts[0].tape.clone();
        let h = parts[0].shape().0;
        let total: usize = parts.iter().map(|p| p.shape().1).sum();
        let mut value = Array2::zeros((h, total));
        let mut start = 0;
        for p in parts {
            if p.shape().0 != h {
                return Err(Error::ShapeMismatch("concat_cols: row mismatch".into()));
            }
            let w = p.shape().1;
            value.slice_mut(s![.., start..start + w]).assign(&p.value());
            start += w;
        }
        let idxs: Vec<usize> = parts.iter().map(|p| p.idx).collect();
        let rg = tape.any_grad(&idxs);
        Ok(tape.push(value, rg, Op::ConcatCols(idxs)))
    }

    /// Stacks several same-width tensors on top of each other.
    pub fn concat_rows(parts: &[Var]) -> Result<Var> {
        let tape = parts[0].tape.clone();
        let w = parts[0].shape().1;
        let total: usize = parts.iter().map(|p| p.shape().0).sum();
        let mut value = Array2::zeros((total, w));
        let mut start = 0;
        for p in parts {
            if p.shape().1 != w {
                return Err(Error::ShapeMismatch("concat_rows: col mismatch".into()));
            }
            let h = p.shape().0;
            value.slice_mut(s![start..start + h, ..]).assign(&p.value());
            start += h;
        }
        let idxs: Vec<usize> = parts.iter().map(|p| p.idx).collect();
        let rg = tape.any_grad(&idxs);
        Ok(tape.push(value, rg, Op::ConcatRows(idxs)))
    }
}
