//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles in
//! creation order, which is already a topological order. [`Tape::backward`]
//! walks the record in reverse and accumulates gradients for every node that
//! depends on a `requires_grad` leaf. The tape itself is never mutated by
//! `backward`, so repeated calls return identical gradients.
//!
//! ```
//! use maxeig::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = x.square().unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Relu(usize),
    MatMul(usize, usize),
    Affine {
        x: usize,
        w: usize,
        b: usize,
        relu: bool,
    },
    Transpose(usize),
    Sum {
        input: usize,
        axis: usize,
    },
    Mean {
        input: usize,
        axis: usize,
    },
    SumAll(usize),
    MeanAll(usize),
    LogSumExp {
        input: usize,
        axis: usize,
    },
    Softmax {
        input: usize,
        axis: usize,
    },
    LogSoftmax {
        input: usize,
        axis: usize,
        probs: Vec<f64>,
    },
    GatherRows {
        input: usize,
        rows: Vec<usize>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Reshape(usize),
    StraightThrough(usize),
    Diagonal(usize),
    BatchNorm {
        input: usize,
        inv_std: Vec<f64>,
    },
    NormAffine {
        input: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
        relu: bool,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Record of primitive operations for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, shape={:?})", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when `var`
    /// does not depend on any trainable leaf.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

/// Sizes `(outer, n, inner)` around `axis` for a row-major shape.
fn axis_dims(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Domain {
            op,
            detail: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn remove_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out = shape.to_vec();
    out.remove(axis);
    out
}

/// Visits every output index `i` of a broadcast op together with `i mod m`,
/// where `m` is the length of the smaller operand. Avoids a division per
/// element.
#[inline(always)]
fn bcast(n: usize, m: usize, mut f: impl FnMut(usize, usize)) {
    for base in (0..n).step_by(m.max(1)) {
        for j in 0..m {
            f(base + j, j);
        }
    }
}

#[inline(always)]
fn pick(len: usize, n: usize, i: usize, j: usize) -> usize {
    if len == n {
        i
    } else {
        j
    }
}

/// Output shape for an elementwise binary op. The smaller operand must be a
/// trailing suffix of the larger one (or hold a single element).
fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        return Ok(sa.to_vec());
    }
    if b.numel() == 1 {
        return Ok(sa.to_vec());
    }
    if a.numel() == 1 {
        return Ok(sb.to_vec());
    }
    if sa.len() > sb.len() && sa.ends_with(sb) {
        return Ok(sa.to_vec());
    }
    if sb.len() > sa.len() && sb.ends_with(sa) {
        return Ok(sb.to_vec());
    }
    Err(Error::Shape {
        op,
        left: sa.to_vec(),
        right: sb.to_vec(),
    })
}

fn zeros_slot(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

/// Column means with biased and unbiased variances of a `[batch, features]`
/// value.
fn column_moments(a: &Tensor) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let s = a.shape();
    if s.len() != 2 || s[0] < 2 {
        return Err(Error::Shape {
            op: "batch_norm",
            left: s.to_vec(),
            right: vec![],
        });
    }
    let (b, h) = (s[0], s[1]);
    let mut mean = vec![0.0; h];
    for row in a.data().chunks_exact(h) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut var = vec![0.0; h];
    for row in a.data().chunks_exact(h) {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let biased = var.iter().map(|v| v / b as f64).collect();
    let unbiased = var.iter().map(|v| v / (b - 1) as f64).collect();
    Ok((mean, biased, unbiased))
}

/// `c += a · b` for row-major operands addressed through explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers sized for the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn check_same(&self, other: Var<'_>) -> Result<()> {
        if std::ptr::eq(self, other.tape) {
            Ok(())
        } else {
            Err(Error::ForeignTape)
        }
    }

    /// Concatenates values along `axis`. All other dimensions must agree.
    pub fn concat<'t>(&'t self, inputs: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero inputs"))?;
        let base = first.value();
        let mut out_shape = base.shape().to_vec();
        axis_dims("concat", &out_shape, axis)?;
        out_shape[axis] = 0;
        let values: Vec<Rc<Tensor>> = inputs.iter().map(|v| v.value()).collect();
        for (v, var) in values.iter().zip(inputs) {
            self.check_same(*var)?;
            let s = v.shape();
            let compatible = s.len() == base.shape().len()
                && s.iter()
                    .zip(base.shape())
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    left: base.shape().to_vec(),
                    right: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let requires_grad = inputs.iter().any(|v| self.requires_grad(v.id));
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Concat { inputs: ids, axis },
            requires_grad,
        ))
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.check_same(loss)?;
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            let node = &nodes[id];
            let out = &*node.value;
            let needs = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| &*nodes[i].value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) {
                        -1.0
                    } else {
                        1.0
                    };
                    let n = g.len();
                    let (la, lb) = (val(*a).numel(), val(*b).numel());
                    let m = la.min(lb);
                    if needs(*a) {
                        let ga = zeros_slot(&mut lower[*a], la);
                        bcast(n, m, |i, j| ga[pick(la, n, i, j)] += g[i]);
                    }
                    if needs(*b) {
                        let gb = zeros_slot(&mut lower[*b], lb);
                        bcast(n, m, |i, j| gb[pick(lb, n, i, j)] += sign * g[i]);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a).data(), val(*b).data());
                    let (la, lb) = (va.len(), vb.len());
                    let (n, m) = (g.len(), la.min(lb));
                    if needs(*a) {
                        let ga = zeros_slot(&mut lower[*a], la);
                        bcast(n, m, |i, j| {
                            ga[pick(la, n, i, j)] += g[i] * vb[pick(lb, n, i, j)]
                        });
                    }
                    if needs(*b) {
                        let gb = zeros_slot(&mut lower[*b], lb);
                        bcast(n, m, |i, j| {
                            gb[pick(lb, n, i, j)] += g[i] * va[pick(la, n, i, j)]
                        });
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (val(*a).data(), val(*b).data());
                    let (la, lb) = (va.len(), vb.len());
                    let (n, m) = (g.len(), la.min(lb));
                    if needs(*a) {
                        let ga = zeros_slot(&mut lower[*a], la);
                        bcast(n, m, |i, j| {
                            ga[pick(la, n, i, j)] += g[i] / vb[pick(lb, n, i, j)]
                        });
                    }
                    if needs(*b) {
                        let gb = zeros_slot(&mut lower[*b], lb);
                        bcast(n, m, |i, j| {
                            let d = vb[pick(lb, n, i, j)];
                            gb[pick(lb, n, i, j)] -= g[i] * va[pick(la, n, i, j)] / (d * d);
                        });
                    }
                }
                Op::Neg(a) => {
                    let ga = zeros_slot(&mut lower[*a], g.len());
                    for (x, gi) in ga.iter_mut().zip(g) {
                        *x -= gi;
                    }
                }
                Op::Exp(a) => {
                    let ga = zeros_slot(&mut lower[*a], g.len());
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += gi * y;
                    }
                }
                Op::Log(a) => {
                    let ga = zeros_slot(&mut lower[*a], g.len());
                    for ((x, gi), v) in ga.iter_mut().zip(g).zip(val(*a).data()) {
                        *x += gi / v;
                    }
                }
                Op::Square(a) => {
                    let ga = zeros_slot(&mut lower[*a], g.len());
                    for ((x, gi), v) in ga.iter_mut().zip(g).zip(val(*a).data()) {
                        *x += 2.0 * gi * v;
                    }
                }
                Op::Relu(a) => {
                    let ga = zeros_slot(&mut lower[*a], g.len());
                    for ((x, gi), v) in ga.iter_mut().zip(g).zip(val(*a).data()) {
                        if *v > 0.0 {
                            *x += gi;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let (m, k) = (va.shape()[0], va.shape()[1]);
                    let n = vb.shape()[1];
                    if needs(*a) {
                        // dA = G · Bᵀ
                        let ga = zeros_slot(&mut lower[*a], m * k);
                        gemm_acc(m, n, k, g, n as isize, 1, vb.data(), 1, n as isize, ga);
                    }
                    if needs(*b) {
                        // dB = Aᵀ · G
                        let gb = zeros_slot(&mut lower[*b], k * n);
                        gemm_acc(k, m, n, va.data(), 1, k as isize, g, n as isize, 1, gb);
                    }
                }
                Op::Affine { x, w, b, relu } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (m, k) = (xv.shape()[0], xv.shape()[1]);
                    let n = wv.shape()[1];
                    let masked;
                    let g: &[f64] = if *relu {
                        masked = g
                            .iter()
                            .zip(out.data())
                            .map(|(gi, o)| if *o > 0.0 { *gi } else { 0.0 })
                            .collect::<Vec<f64>>();
                        &masked
                    } else {
                        g
                    };
                    if needs(*x) {
                        let gx = zeros_slot(&mut lower[*x], m * k);
                        gemm_acc(m, n, k, g, n as isize, 1, wv.data(), 1, n as isize, gx);
                    }
                    if needs(*w) {
                        let gw = zeros_slot(&mut lower[*w], k * n);
                        gemm_acc(k, m, n, xv.data(), 1, k as isize, g, n as isize, 1, gw);
                    }
                    if needs(*b) {
                        let gb = zeros_slot(&mut lower[*b], n);
                        for row in g.chunks_exact(n) {
                            for (acc, gi) in gb.iter_mut().zip(row) {
                                *acc += gi;
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (out.shape()[0], out.shape()[1]);
                    let ga = zeros_slot(&mut lower[*a], r * c);
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                }
                Op::Sum { input, axis } | Op::Mean { input, axis } => {
                    let shape = val(*input).shape();
                    let (outer, n, inner) = axis_dims("sum", shape, *axis)?;
                    let scale = if matches!(node.op, Op::Mean { .. }) {
                        1.0 / n as f64
                    } else {
                        1.0
                    };
                    let ga = zeros_slot(&mut lower[*input], outer * n * inner);
                    for o in 0..outer {
                        for j in 0..n {
                            for i in 0..inner {
                                ga[(o * n + j) * inner + i] += scale * g[o * inner + i];
                            }
                        }
                    }
                }
                Op::SumAll(a) | Op::MeanAll(a) => {
                    let len = val(*a).numel();
                    let scale = if matches!(node.op, Op::MeanAll(_)) {
                        1.0 / len as f64
                    } else {
                        1.0
                    };
                    let ga = zeros_slot(&mut lower[*a], len);
                    for x in ga.iter_mut() {
                        *x += scale * g[0];
                    }
                }
                Op::LogSumExp { input, axis } => {
                    let v = val(*input);
                    let (outer, n, inner) = axis_dims("logsumexp", v.shape(), *axis)?;
                    let ga = zeros_slot(&mut lower[*input], outer * n * inner);
                    for o in 0..outer {
                        for i in 0..inner {
                            let lse = out.data()[o * inner + i];
                            let go = g[o * inner + i];
                            for j in 0..n {
                                let idx = (o * n + j) * inner + i;
                                ga[idx] += go * (v.data()[idx] - lse).exp();
                            }
                        }
                    }
                }
                Op::Softmax { input, axis } => {
                    let (outer, n, inner) = axis_dims("softmax", out.shape(), *axis)?;
                    let y = out.data();
                    let ga = zeros_slot(&mut lower[*input], outer * n * inner);
                    for o in 0..outer {
                        for i in 0..inner {
                            let dot: f64 = (0..n)
                                .map(|j| {
                                    let idx = (o * n + j) * inner + i;
                                    g[idx] * y[idx]
                                })
                                .sum();
                            for j in 0..n {
                                let idx = (o * n + j) * inner + i;
                                ga[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                }
                Op::LogSoftmax { input, axis, probs } => {
                    let (outer, n, inner) = axis_dims("log_softmax", out.shape(), *axis)?;
                    let ga = zeros_slot(&mut lower[*input], outer * n * inner);
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let total: f64 = (0..n).map(|j| g[idx(j)]).sum();
                            for j in 0..n {
                                ga[idx(j)] += g[idx(j)] - probs[idx(j)] * total;
                            }
                        }
                    }
                }
                Op::GatherRows { input, rows } => {
                    let v = val(*input);
                    let width: usize = v.shape()[1..].iter().product();
                    let ga = zeros_slot(&mut lower[*input], v.numel());
                    for (r, &src) in rows.iter().enumerate() {
                        for c in 0..width {
                            ga[src * width + c] += g[r * width + c];
                        }
                    }
                }
                Op::Concat { inputs, axis } => {
                    let outer: usize = out.shape()[..*axis].iter().product();
                    let inner: usize = out.shape()[axis + 1..].iter().product();
                    let total = out.shape()[*axis] * inner;
                    let mut offset = 0;
                    for &inp in inputs {
                        let v = val(inp);
                        let chunk = v.shape()[*axis] * inner;
                        if needs(inp) {
                            let gi = zeros_slot(&mut lower[inp], v.numel());
                            for o in 0..outer {
                                let src = &g[o * total + offset..o * total + offset + chunk];
                                for (x, s) in gi[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                    *x += s;
                                }
                            }
                        }
                        offset += chunk;
                    }
                }
                Op::Reshape(a) | Op::StraightThrough(a) => {
                    let ga = zeros_slot(&mut lower[*a], g.len());
                    for (x, gi) in ga.iter_mut().zip(g) {
                        *x += gi;
                    }
                }
                Op::Diagonal(a) => {
                    let n = g.len();
                    let ga = zeros_slot(&mut lower[*a], n * n);
                    for i in 0..n {
                        ga[i * n + i] += g[i];
                    }
                }
                Op::NormAffine {
                    input,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    batch_stats,
                    relu,
                } => {
                    let x = val(*input).data();
                    let gv = val(*gamma).data();
                    let (b, h) = (out.shape()[0], out.shape()[1]);
                    let o = out.data();
                    let xhat = |idx: usize, c: usize| (x[idx] - mean[c]) * inv_std[c];
                    let gy = |idx: usize| if *relu && o[idx] <= 0.0 { 0.0 } else { g[idx] };
                    let mut sum_g = vec![0.0; h];
                    let mut sum_gx = vec![0.0; h];
                    for r in 0..b {
                        for c in 0..h {
                            let idx = r * h + c;
                            let gi = gy(idx);
                            sum_g[c] += gi;
                            sum_gx[c] += gi * xhat(idx, c);
                        }
                    }
                    if needs(*gamma) {
                        let gg = zeros_slot(&mut lower[*gamma], h);
                        gg.iter_mut().zip(&sum_gx).for_each(|(a, v)| *a += v);
                    }
                    if needs(*beta) {
                        let gb = zeros_slot(&mut lower[*beta], h);
                        gb.iter_mut().zip(&sum_g).for_each(|(a, v)| *a += v);
                    }
                    if needs(*input) {
                        let bf = b as f64;
                        let ga = zeros_slot(&mut lower[*input], b * h);
                        for r in 0..b {
                            for c in 0..h {
                                let idx = r * h + c;
                                let scale = gv[c] * inv_std[c];
                                ga[idx] += if *batch_stats {
                                    scale / bf
                                        * (bf * gy(idx) - sum_g[c] - xhat(idx, c) * sum_gx[c])
                                } else {
                                    scale * gy(idx)
                                };
                            }
                        }
                    }
                }
                Op::BatchNorm { input, inv_std } => {
                    let (b, h) = (out.shape()[0], out.shape()[1]);
                    let xhat = out.data();
                    let mut sum_g = vec![0.0; h];
                    let mut sum_gx = vec![0.0; h];
                    for r in 0..b {
                        for c in 0..h {
                            let gi = g[r * h + c];
                            sum_g[c] += gi;
                            sum_gx[c] += gi * xhat[r * h + c];
                        }
                    }
                    let bf = b as f64;
                    let ga = zeros_slot(&mut lower[*input], b * h);
                    for r in 0..b {
                        for c in 0..h {
                            let idx = r * h + c;
                            ga[idx] +=
                                inv_std[c] / bf * (bf * g[idx] - sum_g[c] - xhat[idx] * sum_gx[c]);
                        }
                    }
                }
            }
        }
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| {
                g.map(|data| Tensor::new(node.value.shape().to_vec(), data))
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads })
    }
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.tape.check_same(other)?;
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(name, &a, &b)?;
        let (la, lb) = (a.numel(), b.numel());
        let (n, m) = (la.max(lb), la.min(lb));
        let (da, db) = (a.data(), b.data());
        let mut data = Vec::with_capacity(n);
        if la == lb {
            data.extend(da.iter().zip(db).map(|(x, y)| f(*x, *y)));
        } else if la == n {
            for chunk in da.chunks_exact(m) {
                data.extend(chunk.iter().zip(db).map(|(x, y)| f(*x, *y)));
            }
        } else {
            for chunk in db.chunks_exact(m) {
                data.extend(da.iter().zip(chunk).map(|(x, y)| f(*x, *y)));
            }
        }
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(Tensor::new(shape, data)?, op, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        if other.value().data().contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary(other, "div", |x, y| x / y, Op::Div(self.id, other.id))
    }

    /// Multiplies by a constant scalar.
    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        let c = self.tape.constant(Tensor::scalar(factor));
        self.mul(c)
    }

    /// Adds a constant scalar.
    pub fn add_scalar(self, offset: f64) -> Result<Var<'t>> {
        let c = self.tape.constant(Tensor::scalar(offset));
        self.add(c)
    }

    pub fn neg(self) -> Var<'t> {
        let v = self.value().map(|x| -x);
        self.unary(Op::Neg(self.id), v)
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(Op::Exp(self.id), v)
    }

    pub fn log(self) -> Result<Var<'t>> {
        let value = self.value();
        if let Some(bad) = value.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive operand {bad}"),
            });
        }
        let v = value.map(f64::ln);
        Ok(self.unary(Op::Log(self.id), v))
    }

    pub fn square(self) -> Result<Var<'t>> {
        let v = self.value().map(|x| x * x);
        Ok(self.unary(Op::Square(self.id), v))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().map(|x| if x > 0.0 { x } else { 0.0 });
        self.unary(Op::Relu(self.id), v)
    }

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same(other)?;
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            a.data(),
            k as isize,
            1,
            b.data(),
            n as isize,
            1,
            &mut data,
        );
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(
            Tensor::new(vec![m, n], data)?,
            Op::MatMul(self.id, other.id),
            rg,
        ))
    }

    /// Dense layer `x · w + b`, optionally followed by relu, as one node.
    pub fn affine(self, w: Var<'t>, b: Var<'t>, relu: bool) -> Result<Var<'t>> {
        self.tape.check_same(w)?;
        self.tape.check_same(b)?;
        let (xv, wv, bv) = (self.value(), w.value(), b.value());
        let (sx, sw) = (xv.shape(), wv.shape());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::Shape {
                op: "affine",
                left: sx.to_vec(),
                right: sw.to_vec(),
            });
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        if bv.shape() != [n] {
            return Err(Error::Shape {
                op: "affine",
                left: sw.to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(bv.data());
        }
        gemm_acc(
            m,
            k,
            n,
            xv.data(),
            k as isize,
            1,
            wv.data(),
            n as isize,
            1,
            &mut data,
        );
        if relu {
            data.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let rg = self.requires_grad() || w.requires_grad() || b.requires_grad();
        let op = Op::Affine {
            x: self.id,
            w: w.id,
            b: b.id,
            relu,
        };
        Ok(self.tape.push(Tensor::new(vec![m, n], data)?, op, rg))
    }

    /// Transpose of a 2-D value.
    pub fn t(self) -> Result<Var<'t>> {
        let a = self.value();
        let s = a.shape();
        if s.len() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                left: s.to_vec(),
                right: vec![],
            });
        }
        let (r, c) = (s[0], s[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.data()[i * c + j];
            }
        }
        Ok(self.unary(Op::Transpose(self.id), Tensor::new(vec![c, r], data)?))
    }

    fn reduce(self, axis: usize, mean: bool) -> Result<Var<'t>> {
        let a = self.value();
        let (outer, n, inner) = axis_dims("sum", a.shape(), axis)?;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += a.data()[(o * n + j) * inner + i];
                }
            }
        }
        if mean {
            data.iter_mut().for_each(|x| *x /= n as f64);
        }
        let shape = remove_axis(a.shape(), axis);
        let op = if mean {
            Op::Mean {
                input: self.id,
                axis,
            }
        } else {
            Op::Sum {
                input: self.id,
                axis,
            }
        };
        Ok(self.unary(op, Tensor::new(shape, data)?))
    }

    /// Sum over `axis`, removing it.
    pub fn sum(self, axis: usize) -> Result<Var<'t>> {
        self.reduce(axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean(self, axis: usize) -> Result<Var<'t>> {
        self.reduce(axis, true)
    }

    pub fn sum_all(self) -> Var<'t> {
        let s: f64 = self.value().data().iter().sum();
        self.unary(Op::SumAll(self.id), Tensor::scalar(s))
    }

    pub fn mean_all(self) -> Var<'t> {
        let v = self.value();
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.unary(Op::MeanAll(self.id), Tensor::scalar(s))
    }

    /// Max-shifted log-sum-exp over `axis`, removing it.
    pub fn logsumexp(self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (outer, n, inner) = axis_dims("logsumexp", a.shape(), axis)?;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| a.data()[(o * n + j) * inner + i];
                let max = (0..n).map(at).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..n).map(|j| (at(j) - max).exp()).sum();
                data[o * inner + i] = max + s.ln();
            }
        }
        let shape = remove_axis(a.shape(), axis);
        Ok(self.unary(
            Op::LogSumExp {
                input: self.id,
                axis,
            },
            Tensor::new(shape, data)?,
        ))
    }

    /// Softmax along `axis`; shape is preserved.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (outer, n, inner) = axis_dims("softmax", a.shape(), axis)?;
        let mut data = vec![0.0; a.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n)
                    .map(|j| a.data()[idx(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (a.data()[idx(j)] - max).exp();
                    data[idx(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    data[idx(j)] /= total;
                }
            }
        }
        Ok(self.unary(
            Op::Softmax {
                input: self.id,
                axis,
            },
            Tensor::new(a.shape().to_vec(), data)?,
        ))
    }

    /// `x − logsumexp(x)` along `axis`, computed as `(x − max) − log Σ exp(x − max)`
    /// so a constant slice gives exactly `−log n`.
    pub fn log_softmax(self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (outer, n, inner) = axis_dims("log_softmax", a.shape(), axis)?;
        let x = a.data();
        let mut data = vec![0.0; a.numel()];
        let mut probs = vec![0.0; a.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (x[idx(j)] - max).exp();
                    probs[idx(j)] = e;
                    total += e;
                }
                let log_total = total.ln();
                for j in 0..n {
                    data[idx(j)] = (x[idx(j)] - max) - log_total;
                    probs[idx(j)] /= total;
                }
            }
        }
        Ok(self.unary(
            Op::LogSoftmax {
                input: self.id,
                axis,
                probs,
            },
            Tensor::new(a.shape().to_vec(), data)?,
        ))
    }

    /// Selects rows (first-axis slices) by index; indices may repeat.
    pub fn gather_rows(self, rows: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let s = a.shape();
        if s.is_empty() {
            return Err(Error::Shape {
                op: "gather_rows",
                left: vec![],
                right: vec![rows.len()],
            });
        }
        let width: usize = s[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= s[0] {
                return Err(Error::Domain {
                    op: "gather_rows",
                    detail: format!("row {r} out of range for shape {s:?}"),
                });
            }
            data.extend_from_slice(&a.data()[r * width..(r + 1) * width]);
        }
        let mut shape = s.to_vec();
        shape[0] = rows.len();
        Ok(self.unary(
            Op::GatherRows {
                input: self.id,
                rows: rows.to_vec(),
            },
            Tensor::new(shape, data)?,
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = (*self.value()).clone().reshape(shape.to_vec())?;
        Ok(self.unary(Op::Reshape(self.id), v))
    }

    /// Forward value `value`, backward identity to `self`.
    pub fn straight_through(self, value: Tensor) -> Result<Var<'t>> {
        if value.shape() != self.value().shape() {
            return Err(Error::Shape {
                op: "straight_through",
                left: self.shape(),
                right: value.shape().to_vec(),
            });
        }
        Ok(self.unary(Op::StraightThrough(self.id), value))
    }

    /// Diagonal of a square matrix.
    pub fn diagonal(self) -> Result<Var<'t>> {
        let a = self.value();
        let s = a.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::Shape {
                op: "diagonal",
                left: s.to_vec(),
                right: vec![],
            });
        }
        let n = s[0];
        let data = (0..n).map(|i| a.data()[i * n + i]).collect();
        Ok(self.unary(Op::Diagonal(self.id), Tensor::vector(data)))
    }

    /// Normalises each column of a `[batch, features]` value with the batch
    /// mean and biased variance. Returns the normalised node together with the
    /// batch mean and unbiased variance (for running statistics).
    pub fn batch_norm(self, eps: f64) -> Result<(Var<'t>, Vec<f64>, Vec<f64>)> {
        let a = self.value();
        let (mean, biased, unbiased) = column_moments(&a)?;
        let (b, h) = (a.shape()[0], a.shape()[1]);
        let x = a.data();
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut data = vec![0.0; b * h];
        for r in 0..b {
            for c in 0..h {
                data[r * h + c] = (x[r * h + c] - mean[c]) * inv_std[c];
            }
        }
        let out = self.unary(
            Op::BatchNorm {
                input: self.id,
                inv_std,
            },
            Tensor::new(vec![b, h], data)?,
        );
        Ok((out, mean, unbiased))
    }

    /// Batch norm with batch statistics followed by the per-feature affine
    /// map `γ x̂ + β` and an optional relu, as one node. Returns the batch mean
    /// and unbiased variance alongside.
    pub fn batch_norm_affine(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        eps: f64,
        relu: bool,
    ) -> Result<(Var<'t>, Vec<f64>, Vec<f64>)> {
        let (mean, biased, unbiased) = column_moments(&self.value())?;
        let inv_std = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self.norm_affine(gamma, beta, mean.clone(), inv_std, true, relu)?;
        Ok((out, mean, unbiased))
    }

    /// Same layer with fixed statistics (inference mode).
    pub fn normalize_affine(
        self,
        mean: &[f64],
        var: &[f64],
        gamma: Var<'t>,
        beta: Var<'t>,
        eps: f64,
        relu: bool,
    ) -> Result<Var<'t>> {
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.norm_affine(gamma, beta, mean.to_vec(), inv_std, false, relu)
    }

    fn norm_affine(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
        relu: bool,
    ) -> Result<Var<'t>> {
        self.tape.check_same(gamma)?;
        self.tape.check_same(beta)?;
        let a = self.value();
        let s = a.shape();
        if s.len() != 2 {
            return Err(Error::Shape {
                op: "norm_affine",
                left: s.to_vec(),
                right: vec![],
            });
        }
        let h = s[1];
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [h] || bv.shape() != [h] || mean.len() != h || inv_std.len() != h {
            return Err(Error::Shape {
                op: "norm_affine",
                left: s.to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let (gd, bd) = (gv.data(), bv.data());
        let mut data = Vec::with_capacity(a.numel());
        for row in a.data().chunks_exact(h) {
            for c in 0..h {
                let y = gd[c] * (row[c] - mean[c]) * inv_std[c] + bd[c];
                data.push(if relu { y.max(0.0) } else { y });
            }
        }
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let op = Op::NormAffine {
            input: self.id,
            gamma: gamma.id,
            beta: beta.id,
            mean,
            inv_std,
            batch_stats,
            relu,
        };
        Ok(self.tape.push(Tensor::new(s.to_vec(), data)?, op, rg))
    }
}
