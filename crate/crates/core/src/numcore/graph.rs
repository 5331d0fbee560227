//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a Wengert list: every op appends a node whose parents are
//! already on the list, so reverse insertion order is a valid topological
//! order for the backward sweep.

use std::sync::Arc;

use crate::error::{shape_mismatch, Error, Result};
use crate::numcore::kernels::dot;
use crate::numcore::tensor::{log_sum_exp, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    MatMulTn(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    L2NormalizeRows(Var),
    LogSumExp(Var),
    RowLseMasked(Var, Arc<Vec<bool>>),
    WeightedSum(Var, Arc<Tensor>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Softmax(Var),
    MaxAll(Var, usize),
    SelectRows(Var, Arc<Vec<usize>>),
    ConcatRows(Vec<Var>),
    BceWithLogits(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
    // true if any trainable leaf is upstream
    needs_grad: bool,
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::MatMulNt(a, b) | Op::MatMulTn(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::L2NormalizeRows(a)
            | Op::LogSumExp(a)
            | Op::RowLseMasked(a, _)
            | Op::WeightedSum(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::Softmax(a)
            | Op::MaxAll(a, _)
            | Op::SelectRows(a, _)
            | Op::BceWithLogits(a, _) => vec![*a],
            Op::ConcatRows(parts) => parts.clone(),
        }
    }
}

/// A recorded computation.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn unary_check(t: &Tensor, op: &'static str) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::Domain {
            op,
            detail: format!("expected a matrix, got shape {:?}", t.shape()),
        });
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].trainable = true;
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    /// `aᵀ · b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_tn(self.value(b))?;
        Ok(self.push(out, Op::MatMulTn(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1×n` (or length-`n`) bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        unary_check(xv, "add_row")?;
        let n = xv.cols();
        if bv.len() != n {
            return Err(shape_mismatch("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if let Some(i) = v.data().iter().position(|&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input at index {i}"),
            });
        }
        let out = v.map(f64::ln);
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).l2_normalize_rows()?;
        Ok(self.push(out, Op::L2NormalizeRows(a)))
    }

    /// `ln Σ exp(a)` over every element.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).log_sum_exp());
        self.push(out, Op::LogSumExp(a))
    }

    /// Row-wise log-sum-exp restricted to entries where `mask` is true.
    ///
    /// Produces an `m×1` column. Every row must keep at least one entry.
    pub fn row_lse_masked(&mut self, a: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        let v = self.value(a);
        unary_check(v, "row_lse_masked")?;
        if mask.len() != v.len() {
            return Err(shape_mismatch("row_lse_masked", v.shape(), &[mask.len()]));
        }
        let (m, n) = (v.rows(), v.cols());
        let mut out = Vec::with_capacity(m);
        let mut buf = Vec::with_capacity(n);
        for i in 0..m {
            buf.clear();
            let row = v.row(i);
            let mrow = &mask[i * n..(i + 1) * n];
            buf.extend(row.iter().zip(mrow).filter(|(_, &k)| k).map(|(&x, _)| x));
            if buf.is_empty() {
                return Err(Error::Domain {
                    op: "row_lse_masked",
                    detail: format!("row {i} has no unmasked entries"),
                });
            }
            out.push(log_sum_exp(&buf));
        }
        let out = Tensor::matrix(m, 1, out)?;
        Ok(self.push(out, Op::RowLseMasked(a, mask)))
    }

    /// `Σ w ⊙ a` for a constant weight tensor of the same size.
    pub fn weighted_sum(&mut self, a: Var, weights: Arc<Tensor>) -> Result<Var> {
        let v = self.value(a);
        if weights.len() != v.len() {
            return Err(shape_mismatch("weighted_sum", v.shape(), weights.shape()));
        }
        let out = Tensor::scalar(dot(v.data(), weights.data()));
        Ok(self.push(out, Op::WeightedSum(a, weights)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        self.push(out, Op::Mean(a))
    }

    /// Column means of an `m×n` matrix, as `1×n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        unary_check(v, "mean_rows")?;
        let (m, n) = (v.rows(), v.cols());
        if m == 0 {
            return Err(Error::Domain {
                op: "mean_rows",
                detail: "no rows".into(),
            });
        }
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, x) in out.iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let out = Tensor::matrix(1, n, out)?;
        Ok(self.push(out, Op::MeanRows(a)))
    }

    /// Softmax over every element (shape preserved).
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let lse = v.log_sum_exp();
        let out = v.map(|x| (x - lse).exp());
        self.push(out, Op::Softmax(a))
    }

    /// Maximum element; ties go to the lowest index.
    pub fn max_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut arg = 0;
        for (i, &x) in v.data().iter().enumerate() {
            if x > v.data()[arg] {
                arg = i;
            }
        }
        let out = Tensor::scalar(v.data()[arg]);
        self.push(out, Op::MaxAll(a, arg))
    }

    pub fn select_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).select_rows(&idx)?;
        Ok(self.push(out, Op::SelectRows(a, idx)))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Domain {
            op: "concat_rows",
            detail: "no inputs".into(),
        })?;
        let n = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            unary_check(v, "concat_rows")?;
            if v.cols() != n {
                return Err(shape_mismatch("concat_rows", self.value(*first).shape(), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::matrix(rows, n, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `target ∈ [0, 1]`.
    pub fn bce_with_logits(&mut self, logit: Var, target: f64) -> Result<Var> {
        let v = self.value(logit);
        let x = v.item().map_err(|_| Error::NotScalar {
            op: "bce_with_logits",
            shape: v.shape().into(),
        })?;
        // max(x,0) - x t + ln(1 + e^{-|x|})
        let loss = x.max(0.0) - x * target + (-x.abs()).exp().ln_1p();
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits(logit, target)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar {
                op: "backward",
                shape: lv.shape().into(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| -> Result<()> {
            if needs(&v) {
                acc(grads, v, t)
            } else {
                Ok(())
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(a) {
                    acc(grads, *a, g.matmul_nt(val(*b))?)?;
                }
                if needs(b) {
                    acc(grads, *b, val(*a).matmul_tn(g)?)?;
                }
            }
            Op::MatMulNt(a, b) => {
                // out = A Bᵀ
                if needs(a) {
                    acc(grads, *a, g.matmul(val(*b))?)?;
                }
                if needs(b) {
                    acc(grads, *b, g.matmul_tn(val(*a))?)?;
                }
            }
            Op::MatMulTn(a, b) => {
                // out = Aᵀ B
                if needs(a) {
                    acc(grads, *a, val(*b).matmul_nt(g)?)?;
                }
                if needs(b) {
                    acc(grads, *b, val(*a).matmul(g)?)?;
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone())?;
                acc(grads, *b, g.clone())?;
            }
            Op::AddRow(x, b) => {
                let n = g.cols();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                let gb = Tensor::new(val(*b).shape().to_vec(), gb)?;
                acc(grads, *x, g.clone())?;
                acc(grads, *b, gb)?;
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(val(*b), "mul", |x, y| x * y)?;
                let gb = g.zip_map(val(*a), "mul", |x, y| x * y)?;
                acc(grads, *a, ga)?;
                acc(grads, *b, gb)?;
            }
            Op::Scale(a, s) => acc(grads, *a, g.scale(*s))?,
            Op::Tanh(a) => {
                let ga = g.zip_map(out, "tanh", |gv, y| gv * (1.0 - y * y))?;
                acc(grads, *a, ga)?;
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(out, "sigmoid", |gv, y| gv * y * (1.0 - y))?;
                acc(grads, *a, ga)?;
            }
            Op::Relu(a) => {
                let ga = g.zip_map(val(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                acc(grads, *a, ga)?;
            }
            Op::Exp(a) => {
                let ga = g.zip_map(out, "exp", |gv, y| gv * y)?;
                acc(grads, *a, ga)?;
            }
            Op::Log(a) => {
                let ga = g.zip_map(val(*a), "log", |gv, x| gv / x)?;
                acc(grads, *a, ga)?;
            }
            Op::L2NormalizeRows(a) => {
                // y = x/‖x‖  ⇒  dx = (g − y (g·y)) / ‖x‖
                let x = val(*a);
                let n = x.cols();
                let mut ga = vec![0.0; x.len()];
                for r in 0..x.rows() {
                    let xr = x.row(r);
                    let yr = out.row(r);
                    let gr = g.row(r);
                    let norm = dot(xr, xr).sqrt();
                    let gy = dot(gr, yr);
                    for c in 0..n {
                        ga[r * n + c] = (gr[c] - yr[c] * gy) / norm;
                    }
                }
                acc(grads, *a, Tensor::new(x.shape().to_vec(), ga)?)?;
            }
            Op::LogSumExp(a) => {
                let gs = g.item()?;
                let lse = out.item()?;
                let ga = val(*a).map(|x| gs * (x - lse).exp());
                acc(grads, *a, ga)?;
            }
            Op::RowLseMasked(a, mask) => {
                let x = val(*a);
                let n = x.cols();
                let mut ga = vec![0.0; x.len()];
                for r in 0..x.rows() {
                    let lse = out.data()[r];
                    let gr = g.data()[r];
                    for c in 0..n {
                        if mask[r * n + c] {
                            ga[r * n + c] = gr * (x.get(r, c) - lse).exp();
                        }
                    }
                }
                acc(grads, *a, Tensor::new(x.shape().to_vec(), ga)?)?;
            }
            Op::WeightedSum(a, w) => {
                let gs = g.item()?;
                let ga = Tensor::new(val(*a).shape().to_vec(), w.data().iter().map(|&wi| wi * gs).collect())?;
                acc(grads, *a, ga)?;
            }
            Op::Sum(a) => {
                let gs = g.item()?;
                acc(grads, *a, Tensor::full(val(*a).shape(), gs))?;
            }
            Op::Mean(a) => {
                let gs = g.item()?;
                let n = val(*a).len() as f64;
                acc(grads, *a, Tensor::full(val(*a).shape(), gs / n))?;
            }
            Op::MeanRows(a) => {
                let x = val(*a);
                let m = x.rows();
                let mut ga = Vec::with_capacity(x.len());
                for _ in 0..m {
                    ga.extend(g.data().iter().map(|v| v / m as f64));
                }
                acc(grads, *a, Tensor::new(x.shape().to_vec(), ga)?)?;
            }
            Op::Softmax(a) => {
                // dx = y ⊙ (g − g·y)
                let gy = dot(g.data(), out.data());
                let ga = g.zip_map(out, "softmax", |gv, y| y * (gv - gy))?;
                acc(grads, *a, ga)?;
            }
            Op::MaxAll(a, arg) => {
                let mut ga = Tensor::zeros(val(*a).shape());
                ga.data_mut()[*arg] = g.item()?;
                acc(grads, *a, ga)?;
            }
            Op::SelectRows(a, idx) => {
                let x = val(*a);
                let n = x.cols();
                let mut ga = Tensor::zeros(x.shape());
                for (k, &i) in idx.iter().enumerate() {
                    let src = g.row(k);
                    for (d, s) in ga.row_mut(i).iter_mut().zip(src) {
                        *d += s;
                    }
                }
                debug_assert_eq!(ga.cols(), n);
                acc(grads, *a, ga)?;
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let shape = val(p).shape().to_vec();
                    let rows = val(p).rows();
                    let slice = g.data()[offset * n..(offset + rows) * n].to_vec();
                    acc(grads, p, Tensor::new(shape, slice)?)?;
                    offset += rows;
                }
            }
            Op::BceWithLogits(logit, target) => {
                let x = val(*logit).item()?;
                let gs = g.item()?;
                let gl = Tensor::full(val(*logit).shape(), gs * (sigmoid(x) - target));
                acc(grads, *logit, gl)?;
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.accumulate(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_abs_diff_eq!(grads.wrt(x).item().unwrap(), 6.0);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.tanh(x);
        assert_abs_diff_eq!(g.backward(y).unwrap().wrt(x).item().unwrap(), 1.0);
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let unused = g.param(Tensor::zeros(&[2, 3]));
        let y = g.exp(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(unused), Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(&[1.0, 0.0]));
        assert!(g.log(x).is_err());
    }

    #[test]
    fn max_all_tie_goes_to_lowest_index() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[0.1, 0.7, 0.7, 0.2]));
        let m = g.max_all(x);
        let gx = g.backward(m).unwrap().wrt(x);
        assert_eq!(gx.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn bce_matches_naive_formula() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.3));
        let l = g.bce_with_logits(x, 1.0).unwrap();
        let p = sigmoid(0.3);
        assert_abs_diff_eq!(g.scalar_value(l).unwrap(), -p.ln(), epsilon = 1e-14);
        assert!(g.bce_with_logits(x, 0.0).is_ok());
        let mut g2 = Graph::new();
        let big = g2.constant(Tensor::scalar(800.0));
        let l2 = g2.bce_with_logits(big, 0.0).unwrap();
        assert!(g2.scalar_value(l2).unwrap().is_finite());
    }
}
