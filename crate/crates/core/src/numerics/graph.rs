//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation in creation order, so the node list is
//! always topologically sorted. [`Graph::backward`] walks it in exact reverse.
//! Parameters are borrowed from the caller and never copied onto the tape.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{gemm, GemmOperand, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from a stream seeded with `seed`.
    Train { seed: u64 },
    Eval,
}

/// Fixed sparse linear map over rows: `out[o] += w * in[i]` per entry.
///
/// Graph convolution propagation, pooling, gathers and scatters are all
/// expressed this way; the map itself is a constant, never a parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct RowMix {
    in_rows: usize,
    out_rows: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl RowMix {
    pub fn new(in_rows: usize, out_rows: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(o, i, _)) = entries.iter().find(|(o, i, _)| *o >= out_rows || *i >= in_rows)
        {
            return Err(Error::Shape(format!(
                "row mix entry ({o},{i}) outside {out_rows}x{in_rows}"
            )));
        }
        Ok(RowMix {
            in_rows,
            out_rows,
            entries,
        })
    }

    /// Selects input rows in the given order.
    pub fn gather(in_rows: usize, picks: &[usize]) -> Result<Self> {
        RowMix::new(
            in_rows,
            picks.len(),
            picks.iter().enumerate().map(|(o, &i)| (o, i, 1.0)).collect(),
        )
    }

    pub fn in_rows(&self) -> usize {
        self.in_rows
    }

    pub fn out_rows(&self) -> usize {
        self.out_rows
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Dense `out_rows x in_rows` matrix of the map.
    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.out_rows, self.in_rows]);
        let n = self.in_rows;
        for &(o, i, w) in &self.entries {
            t.data_mut()[o * n + i] += w;
        }
        t
    }
}

enum Value {
    Owned(Tensor),
    Param(usize),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    OneMinus(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    SoftmaxRows(Var),
    Clamp(Var, f64, f64),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    RowMix(Var, Arc<RowMix>),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    nodes: Vec<Node>,
    params: &'p [Tensor],
    mode: Mode,
    rng: ChaCha8Rng,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    params: Vec<Option<Tensor>>,
    leaves: Vec<(Var, Tensor)>,
}

impl Gradients {
    /// Gradient for parameter `index`, `None` if the loss does not depend on it.
    pub fn param(&self, index: usize) -> Option<&Tensor> {
        self.params.get(index).and_then(Option::as_ref)
    }

    pub fn into_params(self) -> Vec<Option<Tensor>> {
        self.params
    }

    /// Gradient for a leaf created with [`Graph::variable`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.iter().find(|(l, _)| *l == v).map(|(_, t)| t)
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn is_row_of(row: &Tensor, m: &Tensor) -> bool {
    row.rows() == 1 && row.cols() == m.cols()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor], mode: Mode) -> Self {
        let seed = match mode {
            Mode::Train { seed } => seed,
            Mode::Eval => 0,
        };
        Graph {
            nodes: Vec::new(),
            params,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(i) => &self.params[*i],
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported through [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to the borrowed parameter `index`.
    pub fn param(&mut self, index: usize) -> Result<Var> {
        if index >= self.params.len() {
            return Err(Error::Shape(format!("no parameter {index}")));
        }
        self.nodes.push(Node {
            value: Value::Param(index),
            op: Op::Leaf,
            needs_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Fails with a numeric error naming `label` if `v` holds NaN or Inf.
    pub fn check_finite(&self, v: Var, label: &str) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(label.to_string()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// Exact-shape addition, or broadcast of a row vector `b` over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        if ta.shape() == tb.shape() {
            let mut out = ta.clone();
            out.axpy(1.0, tb);
            Ok(self.push(out, Op::Add(a, b), ng))
        } else if is_row_of(tb, ta) {
            let mut out = ta.clone();
            let c = out.cols();
            for r in 0..out.rows() {
                for (o, x) in out.data_mut()[r * c..(r + 1) * c].iter_mut().zip(tb.data()) {
                    *o += x;
                }
            }
            Ok(self.push(out, Op::AddRow(a, b), ng))
        } else {
            Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )))
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "sub")?;
        let mut out = ta.clone();
        out.axpy(-1.0, tb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Exact-shape elementwise product, or row-vector broadcast of `b`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
            let out = Tensor::new(ta.shape(), data)?;
            Ok(self.push(out, Op::Mul(a, b), ng))
        } else if is_row_of(tb, ta) {
            let c = ta.cols();
            let data = ta
                .data()
                .iter()
                .enumerate()
                .map(|(k, x)| x * tb.data()[k % c])
                .collect();
            let out = Tensor::new(ta.shape(), data)?;
            Ok(self.push(out, Op::MulRow(a, b), ng))
        } else {
            Err(Error::Shape(format!(
                "mul: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )))
        }
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let ta = self.value(a);
        same_shape(ta, &c, "mul_const")?;
        let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::MulConst(a, c), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        let ng = self.needs(a);
        self.push(out, Op::OneMinus(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    /// Natural log; any non-positive input is a domain error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if let Some(bad) = ta.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let out = ta.map(f64::ln);
        let ng = self.needs(a);
        Ok(self.push(out, Op::Log(a), ng))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = ta.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Clamps into `[lo, hi]`; gradient is zero where clamping bites.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.needs(a);
        self.push(out, Op::Clamp(a, lo, hi), ng)
    }

    /// Per-row normalization to zero mean and unit variance, then `gain * x + bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Domain("layernorm eps must be positive".into()));
        }
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.cols();
        if d == 0 || tg.len() != d || tb.len() != d {
            return Err(Error::Shape(format!(
                "layernorm: x {:?}, gain {:?}, bias {:?}",
                tx.shape(),
                tg.shape(),
                tb.shape()
            )));
        }
        let rows = tx.rows();
        let mut xhat = Tensor::zeros(tx.shape());
        let mut out = Tensor::zeros(tx.shape());
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            let xh = xhat.row_mut(r);
            for (h, v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * inv;
            }
            let o = &mut out.data_mut()[r * d..(r + 1) * d];
            for j in 0..d {
                o[j] = xhat.data()[r * d + j] * tg.data()[j] + tb.data()[j];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&v) => self.value(v).rows(),
            None => return Err(Error::Shape("concat of nothing".into())),
        };
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::Shape(format!(
                    "concat_cols: {} rows vs {}",
                    t.rows(),
                    rows
                )));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(&[rows, total], data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        let c = ta.cols();
        if start > end || end > c {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of {c}")));
        }
        let rows = ta.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let out = Tensor::new(&[rows, end - start], data)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&v) => self.value(v).cols(),
            None => return Err(Error::Shape("concat of nothing".into())),
        };
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::Shape(format!(
                    "concat_rows: {} cols vs {}",
                    t.cols(),
                    cols
                )));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(&[rows, cols], data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start > end || end > ta.rows() {
            return Err(Error::Shape(format!(
                "slice_rows {start}..{end} of {}",
                ta.rows()
            )));
        }
        let c = ta.cols();
        let out = Tensor::new(&[end - start, c], ta.data()[start * c..end * c].to_vec())?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceRows(a, start), ng))
    }

    pub fn row_mix(&mut self, a: Var, mix: &Arc<RowMix>) -> Result<Var> {
        let ta = self.value(a);
        if ta.rows() != mix.in_rows {
            return Err(Error::Shape(format!(
                "row_mix expects {} rows, got {}",
                mix.in_rows,
                ta.rows()
            )));
        }
        let c = ta.cols();
        let mut out = Tensor::zeros(&[mix.out_rows, c]);
        for &(o, i, w) in &mix.entries {
            let src = &ta.data()[i * c..(i + 1) * c];
            let dst = &mut out.data_mut()[o * c..(o + 1) * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        let ng = self.needs(a);
        Ok(self.push(out, Op::RowMix(a, Arc::clone(mix)), ng))
    }

    /// Inverted dropout; the identity in eval mode or when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Domain(format!("dropout rate {rate} outside [0,1)")));
        }
        if rate == 0.0 || self.mode == Mode::Eval {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let ta = self.value(a);
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Dropout(a, mask), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.len().max(1) as f64;
        let out = Tensor::scalar(ta.sum() / n);
        let ng = self.needs(a);
        self.push(out, Op::Mean(a), ng)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut out = Gradients {
            params: (0..self.params.len()).map(|_| None).collect(),
            leaves: Vec::new(),
        };
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match (&node.op, &node.value) {
                (Op::Leaf, Value::Param(p)) => match &mut out.params[*p] {
                    Some(acc) => acc.axpy(1.0, &g),
                    slot @ None => *slot = Some(g),
                },
                (Op::Leaf, Value::Owned(_)) => out.leaves.push((Var(idx), g)),
                (op, _) => self.propagate(op, Var(idx), &g, &mut grads)?,
            }
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.needs(v) {
            return None;
        }
        let shape = self.value(v).shape().to_vec();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape)))
    }

    fn propagate(
        &self,
        op: &Op,
        this: Var,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let y = self.value(this);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.slot(grads, *a) {
                    // dA = dC * B^T
                    gemm(
                        GemmOperand::plain(g.data(), m, n),
                        GemmOperand::transposed(tb.data(), k, n),
                        ga.data_mut(),
                        1.0,
                    );
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // dB = A^T * dC
                    gemm(
                        GemmOperand::transposed(ta.data(), m, k),
                        GemmOperand::plain(g.data(), m, n),
                        gb.data_mut(),
                        1.0,
                    );
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.axpy(1.0, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.axpy(1.0, g);
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.axpy(1.0, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let c = g.cols();
                    for r in 0..g.rows() {
                        for (d, s) in gb.data_mut().iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.axpy(1.0, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.axpy(-1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *d += gv * bv;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((d, gv), av) in gb.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *d += gv * av;
                    }
                }
            }
            Op::MulRow(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = ta.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for (k, (d, gv)) in ga.data_mut().iter_mut().zip(g.data()).enumerate() {
                        *d += gv * tb.data()[k % c];
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (k, (gv, av)) in g.data().iter().zip(ta.data()).enumerate() {
                        gb.data_mut()[k % c] += gv * av;
                    }
                }
            }
            Op::MulConst(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, gv), cv) in ga.data_mut().iter_mut().zip(g.data()).zip(c.data()) {
                        *d += gv * cv;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.axpy(*s, g);
                }
            }
            Op::OneMinus(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.axpy(-1.0, g);
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        if *yv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gv * yv * (1.0 - yv);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
            }
            Op::Log(a) => {
                let ta = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, gv), xv) in ga.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *d += gv / xv;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let c = y.cols();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        let dr = &mut ga.data_mut()[r * c..(r + 1) * c];
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let ta = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, gv), xv) in ga.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        if *xv >= *lo && *xv <= *hi {
                            *d += gv;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = xhat.cols();
                let tg = self.value(*gain);
                if let Some(gg) = self.slot(grads, *gain) {
                    for r in 0..xhat.rows() {
                        for j in 0..d {
                            gg.data_mut()[j] += g.data()[r * d + j] * xhat.data()[r * d + j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for r in 0..xhat.rows() {
                        for j in 0..d {
                            gb.data_mut()[j] += g.data()[r * d + j];
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let mut dxhat = vec![0.0; d];
                    for r in 0..xhat.rows() {
                        let xh = xhat.row(r);
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            dxhat[j] = g.data()[r * d + j] * tg.data()[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xh[j];
                        }
                        let k = inv_std[r] / d as f64;
                        let dr = &mut gx.data_mut()[r * d..(r + 1) * d];
                        for j in 0..d {
                            dr[j] += k * (d as f64 * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..g.rows() {
                            let src = &g.data()[r * total + off..r * total + off + w];
                            for (d, s) in gp.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let c = self.value(*a).cols();
                let w = g.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..g.rows() {
                        let dst = &mut ga.data_mut()[r * c + start..r * c + start + w];
                        for (d, s) in dst.iter_mut().zip(&g.data()[r * w..(r + 1) * w]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        for (d, s) in gp.data_mut().iter_mut().zip(&g.data()[off..off + n]) {
                            *d += s;
                        }
                    }
                    off += n;
                }
            }
            Op::SliceRows(a, start) => {
                let c = g.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    let dst = &mut ga.data_mut()[start * c..start * c + g.len()];
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
            }
            Op::RowMix(a, mix) => {
                let c = g.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for &(o, i, w) in &mix.entries {
                        let src = &g.data()[o * c..(o + 1) * c];
                        let dst = &mut ga.data_mut()[i * c..(i + 1) * c];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, gv), m) in ga.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                if let Some(ga) = self.slot(grads, *a) {
                    for d in ga.data_mut() {
                        *d += s;
                    }
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                let s = g.data()[0] / n;
                if let Some(ga) = self.slot(grads, *a) {
                    for d in ga.data_mut() {
                        *d += s;
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
