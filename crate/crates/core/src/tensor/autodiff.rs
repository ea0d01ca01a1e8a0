//! Define-by-run reverse-mode differentiation.
//!
//! Every operation on a [`Var`] that depends on a trainable leaf records its
//! inputs and a pullback closure. Calling [`Var::backward`] linearises the
//! reachable part of that record into a [`Tape`] (ordered by creation, so
//! reverse order is a valid topological order) and replays it from the loss.
//!
//! Operations whose inputs are all constants produce constants and keep no
//! history, so pure evaluation holds no graph in memory.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::value::Tensor;
use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub(crate) const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub(crate) const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

/// Pullback: given the upstream gradient, the output value, the parent
/// values and which parents need a gradient, returns one optional gradient
/// per parent.
type Pullback = Box<dyn Fn(&Tensor, &Tensor, &[&Tensor], &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    pullback: Option<Pullback>,
}

impl Drop for Node {
    // Rollouts create long parent chains; dropping them recursively would
    // overflow the stack.
    fn drop(&mut self) {
        let mut stack: Vec<Var> = std::mem::take(&mut self.parents);
        while let Some(v) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(v.0) {
                stack.append(&mut node.parents);
            }
        }
    }
}

/// Handle to a tensor value that may carry differentiation history.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    /// Trainable leaf.
    pub fn param(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            parents: Vec::new(),
            pullback: None,
        }))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: false,
            parents: Vec::new(),
            pullback: None,
        }))
    }

    pub fn scalar(value: f64) -> Var {
        Var::constant(Tensor::scalar(value))
    }

    fn from_op(value: Tensor, parents: Vec<Var>, pullback: Pullback) -> Var {
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        if requires_grad {
            Var(Rc::new(Node { id: next_id(), value, requires_grad, parents, pullback: Some(pullback) }))
        } else {
            Var::constant(value)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, no history.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    // ---- elementwise binary ops with broadcasting ----

    fn binary(
        &self,
        other: &Var,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        da: fn(f64, f64, f64) -> f64,
        db: fn(f64, f64, f64) -> f64,
    ) -> Result<Var> {
        let (a, b) = (self.value(), other.value());
        if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            let out = Tensor::from_parts(a.shape().to_vec(), data);
            return Ok(Var::from_op(
                out,
                vec![self.clone(), other.clone()],
                Box::new(move |g, _, p, need| {
                    let (a, b) = (p[0], p[1]);
                    let ga = need[0].then(|| {
                        let d = g.data().iter().zip(a.data().iter().zip(b.data()))
                            .map(|(&g, (&x, &y))| da(g, x, y))
                            .collect();
                        Tensor::from_parts(a.shape().to_vec(), d)
                    });
                    let gb = need[1].then(|| {
                        let d = g.data().iter().zip(a.data().iter().zip(b.data()))
                            .map(|(&g, (&x, &y))| db(g, x, y))
                            .collect();
                        Tensor::from_parts(b.shape().to_vec(), d)
                    });
                    vec![ga, gb]
                }),
            ));
        }
        let out_shape = kernels::broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| Error::shape(op, &[a.shape(), b.shape()]))?;
        let mut data = vec![0.0; out_shape.iter().product()];
        let (ad, bd) = (a.data(), b.data());
        kernels::for_each_broadcast(a.shape(), b.shape(), &out_shape, |o, i, j| {
            data[o] = f(ad[i], bd[j]);
        });
        let out = Tensor::from_parts(out_shape.clone(), data);
        Ok(Var::from_op(
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, p, need| {
                let (a, b) = (p[0], p[1]);
                let mut ga = need[0].then(|| vec![0.0; a.numel()]);
                let mut gb = need[1].then(|| vec![0.0; b.numel()]);
                let (ad, bd, gd) = (a.data(), b.data(), g.data());
                kernels::for_each_broadcast(a.shape(), b.shape(), &out_shape, |o, i, j| {
                    if let Some(ga) = ga.as_mut() {
                        ga[i] += da(gd[o], ad[i], bd[j]);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[j] += db(gd[o], ad[i], bd[j]);
                    }
                });
                vec![
                    ga.map(|d| Tensor::from_parts(a.shape().to_vec(), d)),
                    gb.map(|d| Tensor::from_parts(b.shape().to_vec(), d)),
                ]
            }),
        ))
    }

    pub fn try_add(&self, other: &Var) -> Result<Var> {
        self.binary(other, "add", |x, y| x + y, |g, _, _| g, |g, _, _| g)
    }

    pub fn try_sub(&self, other: &Var) -> Result<Var> {
        self.binary(other, "sub", |x, y| x - y, |g, _, _| g, |g, _, _| -g)
    }

    pub fn try_mul(&self, other: &Var) -> Result<Var> {
        self.binary(other, "mul", |x, y| x * y, |g, _, y| g * y, |g, x, _| g * x)
    }

    pub fn try_div(&self, other: &Var) -> Result<Var> {
        self.binary(other, "div", |x, y| x / y, |g, _, y| g / y, |g, x, y| -g * x / (y * y))
    }

    // ---- elementwise unary ops ----

    /// Elementwise map with a caller-supplied derivative `d(x, y)` where
    /// `y = f(x)`.
    pub fn map_elementwise(
        &self,
        f: impl Fn(f64) -> f64,
        deriv: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let out = self.value().map(f);
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g, y, p, _| {
                let x = p[0];
                let d = g.data().iter().zip(x.data().iter().zip(y.data()))
                    .map(|(&g, (&x, &y))| g * deriv(x, y))
                    .collect();
                vec![Some(Tensor::from_parts(x.shape().to_vec(), d))]
            }),
        )
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Var {
        self.map_elementwise(move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.map_elementwise(move |x| x + c, |_, _| 1.0)
    }

    pub fn sin(&self) -> Var {
        self.map_elementwise(f64::sin, |x, _| x.cos())
    }

    pub fn cos(&self) -> Var {
        self.map_elementwise(f64::cos, |x, _| -x.sin())
    }

    pub fn tanh(&self) -> Var {
        self.map_elementwise(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Var {
        self.map_elementwise(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Var {
        self.map_elementwise(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn selu(&self) -> Var {
        self.map_elementwise(
            |x| if x > 0.0 { SELU_LAMBDA * x } else { SELU_LAMBDA * SELU_ALPHA * x.exp_m1() },
            |x, _| if x > 0.0 { SELU_LAMBDA } else { SELU_LAMBDA * SELU_ALPHA * x.exp() },
        )
    }

    pub fn softplus(&self) -> Var {
        self.map_elementwise(softplus, |x, _| sigmoid(x))
    }

    pub fn exp(&self) -> Var {
        self.map_elementwise(f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var {
        self.map_elementwise(f64::ln, |x, _| 1.0 / x)
    }

    pub fn square(&self) -> Var {
        self.map_elementwise(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn powi(&self, n: i32) -> Var {
        self.map_elementwise(move |x| x.powi(n), move |x, _| f64::from(n) * x.powi(n - 1))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        self.map_elementwise(
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    // ---- linear algebra ----

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let (a, b) = (self.value(), other.value());
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("matmul", &[a.shape(), b.shape()]));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        kernels::gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), 0.0, &mut c, (n, 1));
        Ok(Var::from_op(
            Tensor::from_parts(vec![m, n], c),
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, p, need| {
                let (a, b) = (p[0], p[1]);
                let ga = need[0].then(|| {
                    // dA = G · Bᵀ
                    let mut d = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g.data(), (n, 1), b.data(), (1, n), 0.0, &mut d, (k, 1));
                    Tensor::from_parts(vec![m, k], d)
                });
                let gb = need[1].then(|| {
                    // dB = Aᵀ · G
                    let mut d = vec![0.0; k * n];
                    kernels::gemm(k, m, n, a.data(), (1, k), g.data(), (n, 1), 0.0, &mut d, (n, 1));
                    Tensor::from_parts(vec![k, n], d)
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `x · W + b` for `x: [m, k]`, `W: [k, n]`, `b: [n]`.
    pub fn affine(&self, weight: &Var, bias: &Var) -> Result<Var> {
        self.matmul(weight)?.try_add(bias)
    }

    // ---- reductions ----

    pub fn sum(&self) -> Var {
        let x = self.value();
        let out = Tensor::scalar(x.sum());
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(|g, _, p, _| vec![Some(Tensor::full(p[0].shape(), g.item()))]),
        )
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over `axis`, removing it. A rank-1 input reduces to shape `[1]`.
    pub fn sum_axis(&self, axis: usize) -> Result<Var> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::shape("sum_axis", &[x.shape()]));
        }
        let outer: usize = x.shape()[..axis].iter().product();
        let len = x.shape()[axis];
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &x.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape: Vec<usize> = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Var::from_op(
            Tensor::from_parts(shape, out),
            vec![self.clone()],
            Box::new(move |g, _, p, _| {
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        d[(o * len + a) * inner..(o * len + a + 1) * inner].copy_from_slice(src);
                    }
                }
                vec![Some(Tensor::from_parts(p[0].shape().to_vec(), d))]
            }),
        ))
    }

    // ---- shape ops ----

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let out = self.value().reshape(shape)?;
        Ok(Var::from_op(
            out,
            vec![self.clone()],
            Box::new(|g, _, p, _| vec![Some(Tensor::from_parts(p[0].shape().to_vec(), g.data().to_vec()))]),
        ))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value();
        if axis >= x.ndim() || start + len > x.shape()[axis] {
            return Err(Error::shape("slice", &[x.shape()]));
        }
        let outer: usize = x.shape()[..axis].iter().product();
        let full = x.shape()[axis];
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        Ok(Var::from_op(
            Tensor::from_parts(shape, out),
            vec![self.clone()],
            Box::new(move |g, _, p, _| {
                let mut d = vec![0.0; p[0].numel()];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    d[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::from_parts(p[0].shape().to_vec(), d))]
            }),
        ))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(items: &[Var], axis: usize) -> Result<Var> {
        let first = items.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let rank = first.value().ndim();
        if axis >= rank {
            return Err(Error::shape("concat", &[first.shape()]));
        }
        for it in items {
            let s = it.shape();
            let ok = s.len() == rank
                && s.iter().zip(first.shape()).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &[first.shape(), s]));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = items.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (it, &l) in items.iter().zip(&lens) {
                out.extend_from_slice(&it.value().data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Var::from_op(
            Tensor::from_parts(shape, out),
            items.to_vec(),
            Box::new(move |g, _, p, need| {
                let mut offs = 0;
                let mut grads = Vec::with_capacity(p.len());
                for (k, &l) in lens.iter().enumerate() {
                    if need[k] {
                        let mut d = Vec::with_capacity(outer * l * inner);
                        for o in 0..outer {
                            let base = (o * total + offs) * inner;
                            d.extend_from_slice(&g.data()[base..base + l * inner]);
                        }
                        grads.push(Some(Tensor::from_parts(p[k].shape().to_vec(), d)));
                    } else {
                        grads.push(None);
                    }
                    offs += l;
                }
                grads
            }),
        ))
    }

    // ---- spatial ops ----

    /// 2-D convolution: `x: [B, Cin, H, W]`, `weight: [Cout, Cin, K, K]`,
    /// `bias: [Cout]`.
    pub fn conv2d(&self, weight: &Var, bias: &Var, stride: usize, pad: usize) -> Result<Var> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let bad = x.ndim() != 4
            || w.ndim() != 4
            || w.shape()[1] != x.shape()[1]
            || w.shape()[2] != w.shape()[3]
            || b.shape() != [w.shape()[0]]
            || stride == 0
            || x.shape()[2] + 2 * pad < w.shape()[2]
            || x.shape()[3] + 2 * pad < w.shape()[2];
        if bad {
            return Err(Error::shape("conv2d", &[x.shape(), w.shape(), b.shape()]));
        }
        let geom = ConvGeom {
            batch: x.shape()[0],
            c_in: x.shape()[1],
            h: x.shape()[2],
            w: x.shape()[3],
            c_out: w.shape()[0],
            k: w.shape()[2],
            stride,
            pad,
        };
        let out = geom.forward(x.data(), w.data(), b.data());
        let shape = vec![geom.batch, geom.c_out, geom.h_out(), geom.w_out()];
        Ok(Var::from_op(
            Tensor::from_parts(shape, out),
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, _, p, need| {
                let (dx, dw, db) = geom.backward(p[0].data(), p[1].data(), g.data(), need[0]);
                vec![
                    dx.map(|d| Tensor::from_parts(p[0].shape().to_vec(), d)),
                    need[1].then(|| Tensor::from_parts(p[1].shape().to_vec(), dw)),
                    need[2].then(|| Tensor::from_parts(p[2].shape().to_vec(), db)),
                ]
            }),
        ))
    }

    /// Zero-flux five-point Laplacian over the two trailing axes.
    pub fn laplacian(&self) -> Result<Var> {
        let x = self.value();
        let nd = x.ndim();
        if nd < 2 || x.shape()[nd - 1] < 3 || x.shape()[nd - 2] < 3 {
            return Err(Error::shape("laplacian", &[x.shape()]));
        }
        let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        let out = Tensor::from_parts(x.shape().to_vec(), kernels::laplacian_planes(x.data(), h, w));
        Ok(Var::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g, _, p, _| {
                vec![Some(Tensor::from_parts(
                    p[0].shape().to_vec(),
                    kernels::laplacian_planes(g.data(), h, w),
                ))]
            }),
        ))
    }

    // ---- differentiation ----

    /// Reverse-mode gradients of this scalar with respect to every
    /// trainable leaf it depends on.
    pub fn backward(&self) -> Result<Gradients> {
        Tape::record(self)?.backward()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Linear record of the operations reachable from a scalar loss, ordered so
/// that every node follows its inputs.
pub struct Tape {
    loss: Var,
    nodes: Vec<Var>,
}

impl Tape {
    pub fn record(loss: &Var) -> Result<Tape> {
        if loss.value().numel() != 1 {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut nodes = Vec::new();
        let mut stack = vec![loss.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            for p in &v.0.parents {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            nodes.push(v);
        }
        // Ids are assigned at creation, so ascending id is a topological order.
        nodes.sort_by_key(|v| v.id());
        Ok(Tape { loss: loss.clone(), nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Replay from the loss (seeded with gradient 1) back to the leaves.
    pub fn backward(&self) -> Result<Gradients> {
        let mut grads: HashMap<u64, Tensor> = HashMap::new();
        let mut leaves = HashMap::new();
        if !self.loss.requires_grad() {
            return Ok(Gradients { grads: leaves });
        }
        grads.insert(self.loss.id(), Tensor::ones(self.loss.shape()));
        for v in self.nodes.iter().rev() {
            let Some(g) = grads.remove(&v.id()) else { continue };
            let node = &v.0;
            let Some(pullback) = node.pullback.as_ref() else {
                leaves.insert(v.id(), g);
                continue;
            };
            let pvals: Vec<&Tensor> = node.parents.iter().map(|p| p.value()).collect();
            let need: Vec<bool> = node.parents.iter().map(|p| p.requires_grad()).collect();
            let pgrads = pullback(&g, &node.value, &pvals, &need);
            for (p, pg) in node.parents.iter().zip(pgrads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                match grads.get_mut(&p.id()) {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    None => {
                        grads.insert(p.id(), pg);
                    }
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Gradients of a loss, keyed by leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<u64, Tensor>,
}

impl Gradients {
    /// Gradient for `leaf`; zeros if the loss does not depend on it.
    pub fn get(&self, leaf: &Var) -> Tensor {
        self.grads.get(&leaf.id()).cloned().unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }

    /// Whether any gradient flowed into `leaf`.
    pub fn contains(&self, leaf: &Var) -> bool {
        self.grads.contains_key(&leaf.id())
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $call:ident) => {
        impl $trait<&Var> for &Var {
            type Output = Var;
            fn $method(self, rhs: &Var) -> Var {
                self.$call(rhs).unwrap_or_else(|e| panic!("{e}"))
            }
        }
        impl $trait<Var> for Var {
            type Output = Var;
            fn $method(self, rhs: Var) -> Var {
                (&self).$method(&rhs)
            }
        }
        impl $trait<&Var> for Var {
            type Output = Var;
            fn $method(self, rhs: &Var) -> Var {
                (&self).$method(rhs)
            }
        }
        impl $trait<Var> for &Var {
            type Output = Var;
            fn $method(self, rhs: Var) -> Var {
                self.$method(&rhs)
            }
        }
    };
}

impl_binop!(Add, add, try_add);
impl_binop!(Sub, sub, try_sub);
impl_binop!(Mul, mul, try_mul);
impl_binop!(Div, div, try_div);

impl Neg for &Var {
    type Output = Var;
    fn neg(self) -> Var {
        Var::neg(self)
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        Var::neg(&self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: f64) -> Var {
        Var::param(Tensor::scalar(v))
    }

    #[test]
    fn square_value_and_gradient() {
        let x = p(3.0);
        let y = x.square();
        assert_eq!(y.item(), 9.0);
        assert_eq!(y.backward().unwrap().get(&x).item(), 6.0);
    }

    #[test]
    fn matmul_ones() {
        let a = Var::constant(Tensor::ones(&[2, 3]));
        let b = Var::constant(Tensor::ones(&[3, 1]));
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.value().data(), &[3.0, 3.0]);
    }

    #[test]
    fn sin_at_half_pi() {
        let x = p(std::f64::consts::FRAC_PI_2);
        let y = x.sin();
        assert_eq!(y.item(), 1.0);
        assert!(y.backward().unwrap().get(&x).item().abs() < 1e-15);
    }

    #[test]
    fn linear_least_squares_gradient() {
        let w = Var::param(Tensor::matrix(&[&[1.0]]).unwrap());
        let x = Var::constant(Tensor::matrix(&[&[2.0]]).unwrap());
        let t = Var::constant(Tensor::matrix(&[&[0.0]]).unwrap());
        let loss = (x.matmul(&w).unwrap() - t).square().sum();
        assert_eq!(loss.backward().unwrap().get(&w).item(), 8.0);
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let a = p(2.0);
        let b = p(5.0);
        let loss = a.square();
        let g = loss.backward().unwrap();
        assert!(!g.contains(&b));
        assert_eq!(g.get(&b).item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let a = Var::param(Tensor::ones(&[2]));
        assert!(matches!(a.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let a = Var::constant(Tensor::ones(&[2, 3]));
        let b = Var::constant(Tensor::ones(&[2, 2]));
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        assert!(a.try_add(&b).is_err());
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let x = Var::param(Tensor::ones(&[3, 2]));
        let bias = Var::param(Tensor::vector(&[1.0, 2.0]));
        let loss = (&x + &bias).sum();
        let g = loss.backward().unwrap();
        assert_eq!(g.get(&bias).data(), &[3.0, 3.0]);
        assert_eq!(g.get(&x).data(), &[1.0; 6]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let x = p(1.5);
        let y = &x * &x + x.sin() * &x;
        let g = y.backward().unwrap().get(&x).item();
        let expected = 2.0 * 1.5 + 1.5f64.cos() * 1.5 + 1.5f64.sin();
        assert!((g - expected).abs() < 1e-14);
    }

    #[test]
    fn long_chains_drop_without_overflow() {
        let x = p(1.0);
        let mut y = x.clone();
        for _ in 0..200_000 {
            y = y.scale(1.0);
        }
        assert_eq!(y.backward().unwrap().get(&x).item(), 1.0);
    }

    #[test]
    fn constants_keep_no_history() {
        let a = Var::constant(Tensor::ones(&[2]));
        let b = a.sin().exp();
        assert!(!b.requires_grad());
        assert!(b.0.parents.is_empty());
    }
}
