//! Define-by-run reverse-mode tape.
//!
//! Nodes are appended in execution order, so a node's inputs always have
//! smaller ids than the node itself and the backward sweep is a plain reverse
//! iteration over the node list.

use crate::error::{AdError, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Neg(Var),
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f32, f32),
    Square(Var),
    Abs(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    StopGradient,
    Identity(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Minimum(..) => "minimum",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Neg(..) => "neg",
            Op::Elu(..) => "elu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Clamp(..) => "clamp",
            Op::Square(..) => "square",
            Op::Abs(..) => "abs",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumCols(..) => "sum_cols",
            Op::StopGradient => "stop_gradient",
            Op::Identity(..) => "identity",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; exactly zero when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads[v.0].as_deref()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AdError::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    Ok(())
}

fn two_d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(AdError::ShapeMismatch { op, lhs: s.to_vec(), rhs: vec![0, 0] }),
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, len: usize, f: impl FnOnce(&mut [f32])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

#[inline]
fn elu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
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

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Recorded op names in execution order; used to audit graph wiring.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_unchecked(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf (data).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_unchecked(t, Op::Leaf, false)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(AdError::NonFinite { op: op.name() });
        }
        let rg = match op {
            Op::StopGradient => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        Ok(self.push_unchecked(value, op, rg))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f32) -> f32) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, op, &[x])
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f32, f32) -> f32) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape(op.name(), av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, op, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = two_d("matmul", av)?;
        let (k2, n) = two_d("matmul", bv)?;
        if k != k2 {
            return Err(AdError::ShapeMismatch { op: "matmul", lhs: av.shape().to_vec(), rhs: bv.shape().to_vec() });
        }
        let data = kernels::matmul(av.data(), bv.data(), m, k, n);
        self.push(Tensor::matrix(m, n, data)?, Op::MatMul(a, b), &[a, b])
    }

    /// `x[m,n] + b` with `b` of shape `[n]` or `[1,n]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        let (m, n) = two_d("add_bias", xv)?;
        let ok = matches!(bv.shape(), [c] if *c == n) || matches!(bv.shape(), [1, c] if *c == n);
        if !ok {
            return Err(AdError::ShapeMismatch { op: "add_bias", lhs: xv.shape().to_vec(), rhs: bv.shape().to_vec() });
        }
        let mut data = xv.data().to_vec();
        for r in 0..m {
            for (d, bb) in data[r * n..(r + 1) * n].iter_mut().zip(bv.data()) {
                *d += bb;
            }
        }
        self.push(Tensor::matrix(m, n, data)?, Op::AddBias(x, b), &[x, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Minimum(a, b), |x, y| if x <= y { x } else { y })
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f32) -> Result<Var> {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Elu(x), elu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), f32::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), f32::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log(x), f32::ln)
    }

    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Result<Var> {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Abs(x), f32::abs)
    }

    /// Identity forward, zero backward.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        let v = self.nodes[x.0].value.clone();
        self.push(v, Op::StopGradient, &[x])
    }

    /// Identity forward and backward; the differentiable twin of [`Tape::stop_gradient`].
    pub fn identity(&mut self, x: Var) -> Result<Var> {
        let v = self.nodes[x.0].value.clone();
        self.push(v, Op::Identity(x), &[x])
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = &self.nodes[xs[0].0].value;
        let (m, _) = two_d("concat_cols", first)?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let t = &self.nodes[x.0].value;
            let (r, c) = two_d("concat_cols", t)?;
            if r != m {
                return Err(AdError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for &x in xs {
                data.extend_from_slice(self.nodes[x.0].value.row(r));
            }
        }
        self.push(Tensor::matrix(m, n, data)?, Op::ConcatCols(xs.to_vec()), xs)
    }

    /// Columns `[start, start + width)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (m, n) = two_d("slice_cols", xv)?;
        if width == 0 || start + width > n {
            return Err(AdError::ShapeMismatch {
                op: "slice_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, start + width],
            });
        }
        let mut data = Vec::with_capacity(m * width);
        for r in 0..m {
            data.extend_from_slice(&xv.row(r)[start..start + width]);
        }
        self.push(Tensor::matrix(m, width, data)?, Op::SliceCols(x, start), &[x])
    }

    /// Stack 2-D tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = &self.nodes[xs[0].0].value;
        let (_, n) = two_d("concat_rows", first)?;
        let mut m = 0;
        for &x in xs {
            let t = &self.nodes[x.0].value;
            let (r, c) = two_d("concat_rows", t)?;
            if c != n {
                return Err(AdError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            m += r;
        }
        let mut data = Vec::with_capacity(m * n);
        for &x in xs {
            data.extend_from_slice(self.nodes[x.0].value.data());
        }
        self.push(Tensor::matrix(m, n, data)?, Op::ConcatRows(xs.to_vec()), xs)
    }

    /// Sum of all elements (f64 accumulation), scalar output.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = kernels::sum_f64(self.nodes[x.0].value.data());
        self.push(Tensor::scalar(s as f32), Op::Sum(x), &[x])
    }

    /// Mean of all elements (f64 accumulation), scalar output.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let s = kernels::sum_f64(xv.data()) / xv.len() as f64;
        self.push(Tensor::scalar(s as f32), Op::Mean(x), &[x])
    }

    /// Row sums of a 2-D tensor, shape `[m,1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (m, _) = two_d("sum_cols", xv)?;
        let data = (0..m).map(|r| kernels::sum_f64(xv.row(r)) as f32).collect();
        self.push(Tensor::matrix(m, 1, data)?, Op::SumCols(x), &[x])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(AdError::NotScalar(lv.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Only differentiable nodes carry gradients.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let len = |v: Var| self.nodes[v.0].value.len();
        let elementwise = |x: Var, grads: &mut [Option<Vec<f32>>], f: &dyn Fn(usize) -> f32| {
            if self.wants(x) {
                accumulate(&mut grads[x.0], len(x), |buf| {
                    for (i, b) in buf.iter_mut().enumerate() {
                        *b += g[i] * f(i);
                    }
                });
            }
        };
        match node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Identity(x) => elementwise(x, grads, &|_| 1.0),
            Op::MatMul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (m, k) = (av.rows(), av.cols());
                let nn = bv.cols();
                if self.wants(a) {
                    accumulate(&mut grads[a.0], m * k, |buf| kernels::matmul_grad_lhs(g, bv.data(), m, k, nn, buf));
                }
                if self.wants(b) {
                    accumulate(&mut grads[b.0], k * nn, |buf| kernels::matmul_grad_rhs(av.data(), g, m, k, nn, buf));
                }
            }
            Op::AddBias(x, b) => {
                elementwise(x, grads, &|_| 1.0);
                if self.wants(b) {
                    let nb = len(b);
                    accumulate(&mut grads[b.0], nb, |buf| {
                        for row in g.chunks(nb) {
                            for (d, gv) in buf.iter_mut().zip(row) {
                                *d += gv;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                elementwise(a, grads, &|_| 1.0);
                elementwise(b, grads, &|_| 1.0);
            }
            Op::Sub(a, b) => {
                elementwise(a, grads, &|_| 1.0);
                elementwise(b, grads, &|_| -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                elementwise(a, grads, &|i| bv[i]);
                elementwise(b, grads, &|i| av[i]);
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(a), val(b));
                elementwise(a, grads, &|i| if av[i] <= bv[i] { 1.0 } else { 0.0 });
                elementwise(b, grads, &|i| if av[i] <= bv[i] { 0.0 } else { 1.0 });
            }
            Op::Scale(x, s) => elementwise(x, grads, &|_| s),
            Op::AddScalar(x) => elementwise(x, grads, &|_| 1.0),
            Op::Neg(x) => elementwise(x, grads, &|_| -1.0),
            Op::Elu(x) => {
                let xv = val(x);
                elementwise(x, grads, &|i| if xv[i] > 0.0 { 1.0 } else { y[i] + 1.0 });
            }
            Op::Sigmoid(x) => elementwise(x, grads, &|i| y[i] * (1.0 - y[i])),
            Op::Tanh(x) => elementwise(x, grads, &|i| 1.0 - y[i] * y[i]),
            Op::Exp(x) => elementwise(x, grads, &|i| y[i]),
            Op::Log(x) => {
                let xv = val(x);
                elementwise(x, grads, &|i| 1.0 / xv[i]);
            }
            Op::Clamp(x, lo, hi) => {
                let xv = val(x);
                elementwise(x, grads, &|i| if xv[i] >= lo && xv[i] <= hi { 1.0 } else { 0.0 });
            }
            Op::Square(x) => {
                let xv = val(x);
                elementwise(x, grads, &|i| 2.0 * xv[i]);
            }
            Op::Abs(x) => {
                let xv = val(x);
                elementwise(x, grads, &|i| {
                    if xv[i] > 0.0 {
                        1.0
                    } else if xv[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
            }
            Op::ConcatCols(ref xs) => {
                let m = node.value.rows();
                let n = node.value.cols();
                let mut offset = 0;
                for &x in xs {
                    let w = self.nodes[x.0].value.cols();
                    if self.wants(x) {
                        accumulate(&mut grads[x.0], m * w, |buf| {
                            for r in 0..m {
                                let src = &g[r * n + offset..r * n + offset + w];
                                for (d, s) in buf[r * w..(r + 1) * w].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                if self.wants(x) {
                    let xv = &self.nodes[x.0].value;
                    let (m, n) = (xv.rows(), xv.cols());
                    let w = node.value.cols();
                    accumulate(&mut grads[x.0], m * n, |buf| {
                        for r in 0..m {
                            let dst = &mut buf[r * n + start..r * n + start + w];
                            for (d, s) in dst.iter_mut().zip(&g[r * w..(r + 1) * w]) {
                                *d += s;
                            }
                        }
                    });
                }
            }
            Op::ConcatRows(ref xs) => {
                let mut offset = 0;
                for &x in xs {
                    let l = len(x);
                    if self.wants(x) {
                        accumulate(&mut grads[x.0], l, |buf| {
                            for (d, s) in buf.iter_mut().zip(&g[offset..offset + l]) {
                                *d += s;
                            }
                        });
                    }
                    offset += l;
                }
            }
            Op::Sum(x) => {
                if self.wants(x) {
                    accumulate(&mut grads[x.0], len(x), |buf| {
                        for b in buf.iter_mut() {
                            *b += g[0];
                        }
                    });
                }
            }
            Op::Mean(x) => {
                let inv = (1.0 / len(x) as f64) as f32;
                if self.wants(x) {
                    accumulate(&mut grads[x.0], len(x), |buf| {
                        for b in buf.iter_mut() {
                            *b += g[0] * inv;
                        }
                    });
                }
            }
            Op::SumCols(x) => {
                if self.wants(x) {
                    let xv = &self.nodes[x.0].value;
                    let n = xv.cols();
                    accumulate(&mut grads[x.0], xv.len(), |buf| {
                        for (r, row) in buf.chunks_mut(n).enumerate() {
                            for d in row {
                                *d += g[r];
                            }
                        }
                    });
                }
            }
        }
    }
}
