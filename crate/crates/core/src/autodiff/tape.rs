//! Wengert-list reverse-mode differentiation.
//!
//! Every primitive evaluated through a [`Var`] appends one node to its
//! [`Tape`]. Nodes only reference earlier nodes, so replaying the list
//! backwards visits each node once, after all of its consumers.

use std::cell::{Ref, RefCell};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    Shift(usize),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    Exp(usize),
    Ln(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Abs(usize),
    Square(usize),
    Sqrt(usize),
    MaxConst(usize, f64),
    Clamp(usize, f64, f64),
    RowMax(usize, Vec<usize>),
    ConcatCols(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf that is never differentiated.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(loss.tape, self), "loss recorded on another tape");
        let nodes = self.nodes.borrow();
        let seed = &nodes[loss.id].value;
        if seed.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                seed.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Tensor::ones(seed.shape()));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, contrib: Tensor) {
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(contrib.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

/// Sums a full-shape gradient down to the shape of a broadcast operand.
fn reduce_broadcast(g: &Tensor, b_shape: &[usize], mode: Broadcast) -> Tensor {
    match mode {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => {
            let s: f64 = g.data().iter().sum();
            Tensor::new(b_shape.to_vec(), vec![s]).expect("scalar shape")
        }
        Broadcast::Row => {
            let cols = g.cols();
            let mut acc = vec![0.0; cols];
            for r in 0..g.rows() {
                for (a, v) in acc.iter_mut().zip(g.row(r)) {
                    *a += v;
                }
            }
            Tensor::new(b_shape.to_vec(), acc).expect("row shape")
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Row-broadcast multiply used by the `Mul` backward rule.
fn mul_broadcast(g: &Tensor, b: &Tensor, mode: Broadcast) -> Tensor {
    match mode {
        Broadcast::Same => zip_map(g, b, |x, y| x * y),
        Broadcast::Scalar => {
            let s = b.item();
            g.map(|x| x * s)
        }
        Broadcast::Row => {
            let mut out = g.clone();
            let cols = g.cols();
            for r in 0..g.rows() {
                let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
                for (v, w) in row.iter_mut().zip(b.data()) {
                    *v *= w;
                }
            }
            out
        }
    }
}

/// `C = A · B` with optional transposition of either operand.
fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        // SAFETY: pointers and strides describe the live buffers above, whose
        // extents match the (m, k) x (k, n) -> (m, n) product.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data().as_ptr(),
                rsa,
                csa,
                b.data().as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::matrix(m, n, out).expect("gemm shape")
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |id: usize| &nodes[id].value;
    let wants = |id: usize| nodes[id].requires_grad;
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b, mode) => {
            if wants(*a) {
                accumulate(grads, *a, g.clone());
            }
            if wants(*b) {
                accumulate(grads, *b, reduce_broadcast(g, val(*b).shape(), *mode));
            }
        }
        Op::Sub(a, b, mode) => {
            if wants(*a) {
                accumulate(grads, *a, g.clone());
            }
            if wants(*b) {
                let neg = g.map(|x| -x);
                accumulate(grads, *b, reduce_broadcast(&neg, val(*b).shape(), *mode));
            }
        }
        Op::Mul(a, b, mode) => {
            if wants(*a) {
                accumulate(grads, *a, mul_broadcast(g, val(*b), *mode));
            }
            if wants(*b) {
                let full = zip_map(g, val(*a), |x, y| x * y);
                accumulate(grads, *b, reduce_broadcast(&full, val(*b).shape(), *mode));
            }
        }
        Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
        Op::Shift(a) => accumulate(grads, *a, g.clone()),
        Op::MatMul(a, b) => {
            if wants(*a) {
                accumulate(grads, *a, gemm(g, false, val(*b), true));
            }
            if wants(*b) {
                accumulate(grads, *b, gemm(val(*a), true, g, false));
            }
        }
        Op::Sum(a) => {
            let s = g.item();
            accumulate(grads, *a, Tensor::full(val(*a).shape(), s));
        }
        Op::Mean(a) => {
            let x = val(*a);
            let s = g.item() / x.len() as f64;
            accumulate(grads, *a, Tensor::full(x.shape(), s));
        }
        Op::SumRows(a) => {
            let x = val(*a);
            let cols = x.cols();
            let data = (0..x.len()).map(|i| g.data()[i / cols]).collect();
            accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data).unwrap());
        }
        Op::Exp(a) => accumulate(grads, *a, zip_map(g, out, |x, y| x * y)),
        Op::Ln(a) => accumulate(grads, *a, zip_map(g, val(*a), |x, y| x / y)),
        Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, out, |x, y| x * y * (1.0 - y))),
        Op::Tanh(a) => accumulate(grads, *a, zip_map(g, out, |x, y| x * (1.0 - y * y))),
        Op::Relu(a) => accumulate(
            grads,
            *a,
            zip_map(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 }),
        ),
        Op::MaxConst(a, c) => accumulate(
            grads,
            *a,
            zip_map(g, val(*a), |x, y| if y > *c { x } else { 0.0 }),
        ),
        Op::Clamp(a, lo, hi) => accumulate(
            grads,
            *a,
            zip_map(g, val(*a), |x, y| if y > *lo && y < *hi { x } else { 0.0 }),
        ),
        Op::Abs(a) => accumulate(
            grads,
            *a,
            zip_map(g, val(*a), |x, y| {
                if y > 0.0 {
                    x
                } else if y < 0.0 {
                    -x
                } else {
                    0.0
                }
            }),
        ),
        Op::Square(a) => accumulate(grads, *a, zip_map(g, val(*a), |x, y| 2.0 * x * y)),
        Op::Sqrt(a) => accumulate(grads, *a, zip_map(g, out, |x, y| 0.5 * x / y)),
        Op::Softmax(a) => {
            let cols = out.cols();
            let mut dx = vec![0.0; out.len()];
            for r in 0..out.rows() {
                let y = out.row(r);
                let gr = &g.data()[r * cols..(r + 1) * cols];
                let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                for j in 0..cols {
                    dx[r * cols + j] = y[j] * (gr[j] - dot);
                }
            }
            accumulate(grads, *a, Tensor::new(out.shape().to_vec(), dx).unwrap());
        }
        Op::LogSoftmax(a) => {
            let cols = out.cols();
            let mut dx = vec![0.0; out.len()];
            for r in 0..out.rows() {
                let y = out.row(r);
                let gr = &g.data()[r * cols..(r + 1) * cols];
                let total: f64 = gr.iter().sum();
                for j in 0..cols {
                    dx[r * cols + j] = gr[j] - y[j].exp() * total;
                }
            }
            accumulate(grads, *a, Tensor::new(out.shape().to_vec(), dx).unwrap());
        }
        Op::RowMax(a, argmax) => {
            let x = val(*a);
            let cols = x.cols();
            let mut dx = vec![0.0; x.len()];
            for (r, &j) in argmax.iter().enumerate() {
                dx[r * cols + j] = g.data()[r];
            }
            accumulate(grads, *a, Tensor::new(x.shape().to_vec(), dx).unwrap());
        }
        Op::ConcatCols(a, b) => {
            let (p, q) = (val(*a).cols(), val(*b).cols());
            let rows = g.rows();
            if wants(*a) {
                let mut da = Vec::with_capacity(rows * p);
                for r in 0..rows {
                    da.extend_from_slice(&g.row(r)[..p]);
                }
                accumulate(grads, *a, Tensor::new(val(*a).shape().to_vec(), da).unwrap());
            }
            if wants(*b) {
                let mut db = Vec::with_capacity(rows * q);
                for r in 0..rows {
                    db.extend_from_slice(&g.row(r)[p..]);
                }
                accumulate(grads, *b, Tensor::new(val(*b).shape().to_vec(), db).unwrap());
            }
        }
    }
}

fn broadcast_mode(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if b.len() == 1 {
        Ok(Broadcast::Scalar)
    } else if a.rank() == 2
        && b.len() == a.cols()
        && (b.rank() == 1 || (b.rank() == 2 && b.shape()[0] == 1))
    {
        Ok(Broadcast::Row)
    } else {
        Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn broadcast_apply(a: &Tensor, b: &Tensor, mode: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    match mode {
        Broadcast::Same => zip_map(a, b, f),
        Broadcast::Scalar => {
            let s = b.item();
            a.map(|x| f(x, s))
        }
        Broadcast::Row => {
            let cols = a.cols();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data()[i % cols]))
                .collect();
            Tensor::new(a.shape().to_vec(), data).unwrap()
        }
    }
}

fn check_nan(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.has_nan() {
        Err(Error::Numeric(op.to_string()))
    } else {
        Ok(t)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of the forward value.
    pub fn value_ref(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> Tensor {
        self.value_ref().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn unary(
        self,
        name: &'static str,
        f: impl FnOnce(&Tensor) -> Result<Tensor>,
        op: impl FnOnce(usize) -> Op,
    ) -> Result<Var<'t>> {
        let out = {
            let x = self.value_ref();
            check_nan(name, f(&x)?)?
        };
        Ok(self.tape.push(out, op(self.id), self.requires_grad()))
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize, Broadcast) -> Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (out, mode) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let mode = broadcast_mode(name, a, b)?;
            (check_nan(name, broadcast_apply(a, b, mode, f))?, mode)
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, op(self.id, other.id, mode), rg))
    }

    /// Elementwise sum; `other` may be a scalar or a row vector.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", |x| Ok(x.map(|v| v * c)), |a| Op::Scale(a, c))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", |x| Ok(x.map(|v| v + c)), Op::Shift)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::Dimension {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            check_nan("matmul", gemm(a, false, b, false))?
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), rg))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary("sum", |x| Ok(Tensor::scalar(x.data().iter().sum())), Op::Sum)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.unary(
            "mean",
            |x| {
                if x.is_empty() {
                    return Err(Error::contract("mean of empty tensor"));
                }
                Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64))
            },
            Op::Mean,
        )
    }

    /// Reduces each row to its sum: `(n, m) -> (n)`.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        self.unary(
            "sum_rows",
            |x| Ok(Tensor::vector((0..x.rows()).map(|r| x.row(r).iter().sum()).collect())),
            Op::SumRows,
        )
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", |x| Ok(x.map(f64::exp)), Op::Exp)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        self.unary(
            "ln",
            |x| {
                if let Some(v) = x.data().iter().find(|v| **v <= 0.0) {
                    return Err(Error::Domain {
                        op: "ln",
                        detail: format!("non-positive input {v}"),
                    });
                }
                Ok(x.map(f64::ln))
            },
            Op::Ln,
        )
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(
            "sigmoid",
            |x| {
                Ok(x.map(|v| {
                    if v >= 0.0 {
                        1.0 / (1.0 + (-v).exp())
                    } else {
                        let e = v.exp();
                        e / (1.0 + e)
                    }
                }))
            },
            Op::Sigmoid,
        )
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary("tanh", |x| Ok(x.map(f64::tanh)), Op::Tanh)
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(self) -> Result<Var<'t>> {
        self.unary("relu", |x| Ok(x.map(|v| v.max(0.0))), Op::Relu)
    }

    /// `max(x, c)` elementwise; gradient flows only where `x > c`.
    pub fn max_const(self, c: f64) -> Result<Var<'t>> {
        self.unary("max_const", |x| Ok(x.map(|v| v.max(c))), |a| Op::MaxConst(a, c))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.unary("clamp", |x| Ok(x.map(|v| v.clamp(lo, hi))), |a| Op::Clamp(a, lo, hi))
    }

    pub fn abs(self) -> Result<Var<'t>> {
        self.unary("abs", |x| Ok(x.map(f64::abs)), Op::Abs)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary("square", |x| Ok(x.map(|v| v * v)), Op::Square)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(
            "sqrt",
            |x| {
                if let Some(v) = x.data().iter().find(|v| **v < 0.0) {
                    return Err(Error::Domain {
                        op: "sqrt",
                        detail: format!("negative input {v}"),
                    });
                }
                Ok(x.map(f64::sqrt))
            },
            Op::Sqrt,
        )
    }

    /// Row-wise softmax.
    pub fn softmax(self) -> Result<Var<'t>> {
        self.unary("softmax", |x| Ok(row_softmax(x, false)), Op::Softmax)
    }

    /// Row-wise log-softmax, computed with the max-shift for stability.
    pub fn log_softmax(self) -> Result<Var<'t>> {
        self.unary("log_softmax", |x| Ok(row_softmax(x, true)), Op::LogSoftmax)
    }

    /// Per-row maximum: `(n, m) -> (n)`. Ties resolve to the first column.
    pub fn row_max(self) -> Result<Var<'t>> {
        let (out, argmax) = {
            let x = self.value_ref();
            if x.cols() == 0 {
                return Err(Error::contract("row_max over zero columns"));
            }
            let mut vals = Vec::with_capacity(x.rows());
            let mut idx = Vec::with_capacity(x.rows());
            for r in 0..x.rows() {
                let (j, v) = x.row(r).iter().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |(bj, bv), (j, &v)| if v > bv { (j, v) } else { (bj, bv) },
                );
                vals.push(v);
                idx.push(j);
            }
            (check_nan("row_max", Tensor::vector(vals))?, idx)
        };
        Ok(self.tape.push(out, Op::RowMax(self.id, argmax), self.requires_grad()))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut data = Vec::with_capacity(a.len() + b.len());
            for r in 0..a.rows() {
                data.extend_from_slice(a.row(r));
                data.extend_from_slice(b.row(r));
            }
            Tensor::matrix(a.rows(), a.cols() + b.cols(), data)?
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::ConcatCols(self.id, other.id), rg))
    }
}

fn row_softmax(x: &Tensor, log: bool) -> Tensor {
    let cols = x.cols();
    let mut out = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        let row = x.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for &v in row {
            out.push(if log { v - lse } else { (v - lse).exp() });
        }
    }
    debug_assert_eq!(out.len(), x.rows() * cols);
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn relu_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.5]));
        assert_eq!(x.relu().unwrap().value().data(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0; 3]));
        for p in x.softmax().unwrap().value().data() {
            assert!(approx_eq(*p, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn matmul_ones() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::ones(&[2, 3]));
        let b = tape.constant(Tensor::ones(&[3, 1]));
        let c = a.matmul(b).unwrap().value();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 3.0]);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::ones(&[2, 3]));
        let b = tape.constant(Tensor::ones(&[2, 1]));
        match a.matmul(b) {
            Err(Error::Dimension { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 1]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn ln_of_nonpositive_is_domain_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(x.ln(), Err(Error::Domain { op: "ln", .. })));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let loss = x.sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let loss = x.mul(x).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let w = tape.constant(Tensor::vector(vec![2.0, 3.0]));
        let x = tape.param(Tensor::vector(vec![1.0, 1.0]));
        let loss = w.mul(x).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.wrt(x).data(), &[2.0, 3.0]);
    }

    #[test]
    fn relu_kink_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.0, 1.0, -1.0]));
        let loss = x.relu().unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_log_matches() {
        let tape = Tape::new();
        let x = tape.constant(
            Tensor::matrix(2, 3, vec![1.0, -4.0, 30.0, 0.1, 0.2, 0.3]).unwrap(),
        );
        let p = x.softmax().unwrap().value();
        let lp = x.log_softmax().unwrap().value();
        for r in 0..2 {
            let s: f64 = p.row(r).iter().sum();
            assert!(approx_eq(s, 1.0, 1e-12));
            for j in 0..3 {
                assert!(approx_eq(lp.row(r)[j], p.row(r)[j].ln(), 1e-9));
            }
        }
    }

    #[test]
    fn broadcast_row_bias_gradient() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[3, 2]));
        let b = tape.param(Tensor::vector(vec![0.5, -0.5]));
        let loss = x.add(b).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(b).data(), &[3.0, 3.0]);
    }

    #[test]
    fn row_max_routes_gradient_to_first_max() {
        let tape = Tape::new();
        let x = tape.param(Tensor::matrix(2, 3, vec![1.0, 5.0, 5.0, 2.0, 0.0, -1.0]).unwrap());
        let m = x.row_max().unwrap();
        assert_eq!(m.value().data(), &[5.0, 2.0]);
        let g = tape.backward(m.sum().unwrap()).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_splits_gradient() {
        let tape = Tape::new();
        let a = tape.param(Tensor::ones(&[2, 1]));
        let b = tape.param(Tensor::ones(&[2, 2]));
        let w = tape.constant(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let loss = a.concat_cols(b).unwrap().mul(w).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(a).data(), &[1.0, 4.0]);
        assert_eq!(g.wrt(b).data(), &[2.0, 3.0, 5.0, 6.0]);
    }
}
