//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends one node holding its forward value. Because inputs must
//! already exist when an op is recorded, recording order is a topological
//! order, and `backward` simply walks the nodes from last to first.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{gemm_nt_acc, gemm_tn_acc, matmul_lhs_dims, sigmoid, softmax_cross_entropy, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Slice { src: Var, start: usize },
    Concat(Vec<Var>),
    Row { src: Var, index: usize },
    MeanRows(Var),
    Sum(Var),
    SoftmaxXent { logits: Var, label: usize, probs: Tensor },
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// One forward pass worth of recorded operations. Parameters can be borrowed
/// for the tape's lifetime so that building a graph never copies weights.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    nodes_visited: usize,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Number of nodes the reverse sweep stepped through.
    pub fn nodes_visited(&self) -> usize {
        self.nodes_visited
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, value: Cow<'p, Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf borrowing `t`.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.push_leaf(Cow::Borrowed(t), true)
    }

    /// Differentiable leaf owning `t`.
    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.push_leaf(Cow::Owned(t), true)
    }

    /// Non-differentiable leaf (masks, fixed shifts).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(Cow::Owned(t), false)
    }

    pub fn constant_ref(&mut self, t: &'p Tensor) -> Var {
        self.push_leaf(Cow::Borrowed(t), false)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(Cow::Owned(out), Op::MatMul(a, b), rg, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(Cow::Owned(out), Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(Cow::Owned(out), Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(Cow::Owned(out), Op::Mul(a, b), rg, "mul")
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), Op::AddScalar(a), rg, "add_scalar")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), Op::Scale(a, s), rg, "scale")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), Op::Tanh(a), rg, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), Op::Sigmoid(a), rg, "sigmoid")
    }

    /// Contiguous range `[start, start + len)` of a vector.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(src);
        if v.rank() != 1 || start + len > v.len() {
            return Err(Error::dim("slice", v.shape(), &[start, len]));
        }
        let out = Tensor::vector(v.data()[start..start + len].to_vec());
        let rg = self.rg(&[src]);
        self.push(Cow::Owned(out), Op::Slice { src, start }, rg, "slice")
    }

    /// Concatenation of vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 {
                return Err(Error::dim("concat", v.shape(), &[]));
            }
            data.extend_from_slice(v.data());
        }
        let rg = self.rg(parts);
        self.push(Cow::Owned(Tensor::vector(data)), Op::Concat(parts.to_vec()), rg, "concat")
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(&mut self, src: Var, index: usize) -> Result<Var> {
        let v = self.value(src);
        if v.rank() != 2 {
            return Err(Error::dim("row", v.shape(), &[index]));
        }
        if index >= v.rows() {
            return Err(Error::Index { index, len: v.rows() });
        }
        let out = Tensor::vector(v.row(index).to_vec());
        let rg = self.rg(&[src]);
        self.push(Cow::Owned(out), Op::Row { src, index }, rg, "row")
    }

    /// Mean over the rows of a `[T × d]` matrix.
    pub fn mean_rows(&mut self, src: Var) -> Result<Var> {
        let v = self.value(src);
        if v.rank() != 2 {
            return Err(Error::dim("mean_rows", v.shape(), &[]));
        }
        if v.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        let (t, d) = (v.rows(), v.cols());
        let mut out = vec![0.0; d];
        for i in 0..t {
            for (o, x) in out.iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        let inv = 1.0 / t as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.rg(&[src]);
        self.push(Cow::Owned(Tensor::vector(out)), Op::MeanRows(src), rg, "mean_rows")
    }

    pub fn sum(&mut self, src: Var) -> Result<Var> {
        let s = self.value(src).sum();
        let rg = self.rg(&[src]);
        self.push(Cow::Owned(Tensor::vector(vec![s])), Op::Sum(src), rg, "sum")
    }

    /// Fused softmax + negative log-likelihood. Returns the scalar loss node
    /// and the class probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<(Var, Tensor)> {
        let (loss, probs) = softmax_cross_entropy(self.value(logits), label)?;
        let rg = self.rg(&[logits]);
        let var = self.push(
            Cow::Owned(Tensor::vector(vec![loss])),
            Op::SoftmaxXent {
                logits,
                label,
                probs: probs.clone(),
            },
            rg,
            "softmax_cross_entropy",
        )?;
        Ok((var, probs))
    }

    /// Backpropagates from a single-element node. Every node up to and
    /// including `loss` is visited exactly once, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.value(loss).shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));
        let mut visited = 0;

        for i in (0..=loss.0).rev() {
            visited += 1;
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            nodes_visited: visited,
        })
    }

    fn propagate(&self, node: &Node<'p>, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = matmul_lhs_dims(av).expect("validated at record time");
                let n = bv.cols();
                if self.requires_grad(*a) {
                    let da = self.slot(grads, *a);
                    gemm_nt_acc(g.data(), bv.data(), da.data_mut(), m, n, k);
                }
                if self.requires_grad(*b) {
                    let db = self.slot(grads, *b);
                    gemm_tn_acc(av.data(), g.data(), db.data_mut(), m, k, n);
                }
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, g, |gi, _| gi);
                self.acc_map(grads, *b, g, |gi, _| gi);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, g, |gi, _| gi);
                self.acc_map(grads, *b, g, |gi, _| -gi);
            }
            Op::Mul(a, b) => {
                let bv = self.value(*b);
                let av = self.value(*a);
                if self.requires_grad(*a) {
                    let da = self.slot(grads, *a);
                    for ((d, gi), bi) in da.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *d += gi * bi;
                    }
                }
                if self.requires_grad(*b) {
                    let db = self.slot(grads, *b);
                    for ((d, gi), ai) in db.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *d += gi * ai;
                    }
                }
            }
            Op::AddScalar(a) => self.acc_map(grads, *a, g, |gi, _| gi),
            Op::Scale(a, s) => {
                let s = *s;
                self.acc_map(grads, *a, g, move |gi, _| gi * s);
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                if self.requires_grad(*a) {
                    let da = self.slot(grads, *a);
                    for ((d, gi), yi) in da.data_mut().iter_mut().zip(g.data()).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if self.requires_grad(*a) {
                    let da = self.slot(grads, *a);
                    for ((d, gi), yi) in da.data_mut().iter_mut().zip(g.data()).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Slice { src, start } => {
                if self.requires_grad(*src) {
                    let ds = self.slot(grads, *src);
                    for (d, gi) in ds.data_mut()[*start..*start + g.len()].iter_mut().zip(g.data()) {
                        *d += gi;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.requires_grad(p) {
                        let dp = self.slot(grads, p);
                        for (d, gi) in dp.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                            *d += gi;
                        }
                    }
                    offset += len;
                }
            }
            Op::Row { src, index } => {
                if self.requires_grad(*src) {
                    let ds = self.slot(grads, *src);
                    let cols = ds.cols();
                    let row = &mut ds.data_mut()[index * cols..(index + 1) * cols];
                    for (d, gi) in row.iter_mut().zip(g.data()) {
                        *d += gi;
                    }
                }
            }
            Op::MeanRows(src) => {
                if self.requires_grad(*src) {
                    let ds = self.slot(grads, *src);
                    let (t, cols) = (ds.rows(), ds.cols());
                    let inv = 1.0 / t as f64;
                    for i in 0..t {
                        for (d, gi) in ds.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(g.data()) {
                            *d += gi * inv;
                        }
                    }
                }
            }
            Op::Sum(src) => {
                let g0 = g.data()[0];
                self.acc_map(grads, *src, g, move |_, _| g0);
            }
            Op::SoftmaxXent { logits, label, probs } => {
                if self.requires_grad(*logits) {
                    let g0 = g.data()[0];
                    let dl = self.slot(grads, *logits);
                    for (j, (d, p)) in dl.data_mut().iter_mut().zip(probs.data()).enumerate() {
                        let onehot = if j == *label { 1.0 } else { 0.0 };
                        *d += g0 * (p - onehot);
                    }
                }
            }
        }
        Ok(())
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], var: Var) -> &'g mut Tensor {
        grads[var.0].get_or_insert_with(|| Tensor::zeros_like(self.value(var)))
    }

    /// `grad[var][i] += f(g[i], i)` over the shape of `var`; for `Sum` the
    /// upstream is a scalar, hence the index-only form.
    fn acc_map(&self, grads: &mut [Option<Tensor>], var: Var, g: &Tensor, f: impl Fn(f64, usize) -> f64) {
        if !self.requires_grad(var) {
            return;
        }
        let same_shape = g.shape() == self.value(var).shape();
        let slot = self.slot(grads, var);
        for (i, d) in slot.data_mut().iter_mut().enumerate() {
            let gi = if same_shape { g.data()[i] } else { g.data()[0] };
            *d += f(gi, i);
        }
    }
}
