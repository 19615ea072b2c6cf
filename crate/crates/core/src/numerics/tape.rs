//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the record in exact reverse order and accumulates vector-Jacobian
//! products. Parameters enter through [`Tape::param`] and their gradients
//! are collected into a [`Gradients`] map rather than written back, so any
//! number of tapes can read one [`ParamStore`] concurrently.

use std::collections::HashMap;

use super::functions::{leaky_relu_grad, leaky_relu_scalar, PROB_FLOOR};
use super::param::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    OuterSum(Var, Var),
    RowSoftmax(Var),
    Transpose(Var),
    SoftmaxCrossEntropy(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records a parameter leaf. Repeated calls for the same id return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `x[m×n] + b` where `b` holds `n` values, broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let n = tx.cols();
        if tb.len() != n {
            return Err(Error::Dimension {
                op: "add_row",
                left: tx.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = tx.clone();
        for row in out.values_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(tb.values()) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(x, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| leaky_relu_scalar(v, slope));
        self.push(out, Op::LeakyRelu(x, slope))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            out.extend_from_slice(t.values());
        }
        let out = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Row gather; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = dims(t);
        if indices.is_empty() {
            return Err(Error::Degenerate("gather_rows with no indices".into()));
        }
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(Error::Index { index: i, len: m });
            }
            out.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(indices.len(), n, out)?;
        Ok(self.push(out, Op::GatherRows(x, indices.to_vec())))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = dims(t);
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let out = Tensor::matrix(1, n, out)?;
        Ok(self.push(out, Op::MeanRows(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::vector(vec![s]), Op::Sum(x))
    }

    /// `out[i][j] = s[i] + t[j]` for column vectors `s` (m×1) and `t` (n×1).
    pub fn outer_sum(&mut self, s: Var, t: Var) -> Result<Var> {
        let (ts, tt) = (self.value(s), self.value(t));
        if ts.cols() != 1 || tt.cols() != 1 {
            return Err(Error::Dimension {
                op: "outer_sum",
                left: ts.shape().to_vec(),
                right: tt.shape().to_vec(),
            });
        }
        let (m, n) = (ts.len(), tt.len());
        let mut out = Vec::with_capacity(m * n);
        for &si in ts.values() {
            for &tj in tt.values() {
                out.push(si + tj);
            }
        }
        let out = Tensor::matrix(m, n, out)?;
        Ok(self.push(out, Op::OuterSum(s, t)))
    }

    /// Max-shifted softmax applied independently to every row.
    pub fn row_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.cols();
        let mut out = t.values().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out).expect("shape preserved");
        self.push(out, Op::RowSoftmax(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let mut out = self.value(x).transpose();
        if self.value(x).shape().len() == 1 {
            out = out
                .reshape(vec![self.value(x).len(), 1])
                .expect("same size");
        }
        self.push(out, Op::Transpose(x))
    }

    /// Fused softmax + negative log-likelihood of `label` for a single row of logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let t = self.value(logits);
        if label >= t.len() {
            return Err(Error::Index {
                index: label,
                len: t.len(),
            });
        }
        let probs = super::functions::softmax(t.values(), None)?;
        let loss = -probs[label].max(PROB_FLOOR).ln();
        Ok(self.push(
            Tensor::vector(vec![loss]),
            Op::SoftmaxCrossEntropy(logits, label),
        ))
    }

    /// Propagates d(loss)/d(node) from a single-element `loss` back to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                left: self.value(loss).shape().to_vec(),
                right: vec![1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    out.by_param
                        .entry(*id)
                        .and_modify(|acc| acc.add_assign(&g))
                        .or_insert(g);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = dims(ta);
                    let n = tb.cols();
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    let ga = matmul_raw(g.values(), tb.transpose().values(), m, n, k);
                    let gb = matmul_raw(ta.transpose().values(), g.values(), k, m, n);
                    accumulate(&mut grads, *a, ta.shape(), ga);
                    accumulate(&mut grads, *b, tb.shape(), gb);
                }
                Op::Add(a, b) => {
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *a, &shape, g.values().to_vec());
                    accumulate(&mut grads, *b, &shape, g.into_values());
                }
                Op::AddRow(x, b) => {
                    let n = g.cols();
                    let mut gb = vec![0.0; n];
                    for row in g.values().chunks(n) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *b, self.value(*b).shape(), gb);
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *x, &shape, g.into_values());
                }
                Op::Scale(x, f) => {
                    let gx = g.values().iter().map(|v| v * f).collect();
                    accumulate(&mut grads, *x, g.shape(), gx);
                }
                Op::Relu(x) => {
                    let tx = self.value(*x);
                    let gx = g
                        .values()
                        .iter()
                        .zip(tx.values())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, tx.shape(), gx);
                }
                Op::LeakyRelu(x, slope) => {
                    let tx = self.value(*x);
                    let gx = g
                        .values()
                        .iter()
                        .zip(tx.values())
                        .map(|(gv, xv)| gv * leaky_relu_grad(*xv, *slope))
                        .collect();
                    accumulate(&mut grads, *x, tx.shape(), gx);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let tp = self.value(p);
                        let w = tp.cols();
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            let start = r * total + offset;
                            gp.extend_from_slice(&g.values()[start..start + w]);
                        }
                        accumulate(&mut grads, p, tp.shape(), gp);
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let tp = self.value(p);
                        let len = tp.len();
                        accumulate(
                            &mut grads,
                            p,
                            tp.shape(),
                            g.values()[offset..offset + len].to_vec(),
                        );
                        offset += len;
                    }
                }
                Op::GatherRows(x, indices) => {
                    let tx = self.value(*x);
                    let n = tx.cols();
                    let mut gx = vec![0.0; tx.len()];
                    for (r, &i) in indices.iter().enumerate() {
                        for c in 0..n {
                            gx[i * n + c] += g.values()[r * n + c];
                        }
                    }
                    accumulate(&mut grads, *x, tx.shape(), gx);
                }
                Op::MeanRows(x) => {
                    let tx = self.value(*x);
                    let m = tx.rows() as f64;
                    let gx = g
                        .values()
                        .iter()
                        .map(|v| v / m)
                        .cycle()
                        .take(tx.len())
                        .collect();
                    accumulate(&mut grads, *x, tx.shape(), gx);
                }
                Op::Sum(x) => {
                    let tx = self.value(*x);
                    accumulate(&mut grads, *x, tx.shape(), vec![g.values()[0]; tx.len()]);
                }
                Op::OuterSum(s, t) => {
                    let n = g.cols();
                    let mut gs = vec![0.0; g.rows()];
                    let mut gt = vec![0.0; n];
                    for (row, out) in g.values().chunks(n).zip(gs.iter_mut()) {
                        for (v, acc) in row.iter().zip(gt.iter_mut()) {
                            *out += v;
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *s, self.value(*s).shape(), gs);
                    accumulate(&mut grads, *t, self.value(*t).shape(), gt);
                }
                Op::RowSoftmax(x) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut gx = Vec::with_capacity(y.len());
                    for (yr, gr) in y.values().chunks(n).zip(g.values().chunks(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        gx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                    }
                    accumulate(&mut grads, *x, y.shape(), gx);
                }
                Op::Transpose(x) => {
                    let tx = self.value(*x);
                    let gx = g.transpose().into_values();
                    accumulate(&mut grads, *x, tx.shape(), gx);
                }
                Op::SoftmaxCrossEntropy(x, label) => {
                    let tx = self.value(*x);
                    let probs = super::functions::softmax(tx.values(), None)?;
                    let upstream = g.values()[0];
                    let gx = if probs[*label] >= PROB_FLOOR {
                        probs
                            .iter()
                            .enumerate()
                            .map(|(c, p)| upstream * (p - if c == *label { 1.0 } else { 0.0 }))
                            .collect()
                    } else {
                        // clamped region: the loss is locally constant
                        vec![0.0; probs.len()]
                    };
                    accumulate(&mut grads, *x, tx.shape(), gx);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], values: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.values_mut().iter_mut().zip(values) {
                *a += b;
            }
        }
        slot @ None => {
            *slot =
                Some(Tensor::new(shape.to_vec(), values).expect("gradient shape matches value"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_square_sum() {
        let mut store = ParamStore::new();
        let id = store
            .insert("w", Tensor::matrix(1, 2, vec![3.0, -2.0]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let wt = tape.transpose(w);
        let sq = tape.matmul(w, wt).unwrap();
        let loss = tape.sum(sq);
        assert_eq!(tape.value(loss).values(), &[13.0]);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(id).unwrap().values(), &[6.0, -4.0]);
    }

    #[test]
    fn repeated_param_leaf_is_shared() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        assert_eq!(a, b);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn softmax_cross_entropy_grad_is_probs_minus_onehot() {
        let mut store = ParamStore::new();
        let id = store
            .insert("z", Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let z = tape.param(&store, id);
        let loss = tape.softmax_cross_entropy(z, 0).unwrap();
        let g = tape.backward(loss).unwrap();
        let p = crate::numerics::softmax(&[1.0, 2.0, 3.0], None).unwrap();
        let got = g.get(id).unwrap().values();
        assert!((got[0] - (p[0] - 1.0)).abs() < 1e-15);
        assert!((got[1] - p[1]).abs() < 1e-15);
        assert!((got[2] - p[2]).abs() < 1e-15);
    }
}
