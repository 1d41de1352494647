//! The gradient tape and the tensor handle type.
//!
//! A [`Tape`] is an append-only arena of nodes. Each differentiable
//! operation appends one node holding the forward value and a closure that
//! scatters the node's output gradient back into its parents. Reverse
//! iteration over the arena is therefore a valid topological order and
//! [`Tape::backward`] is a single linear sweep.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::param::{ParamId, ParamSet};
use super::{Result, TensorError};

/// Gradient accumulation sink used during the reverse sweep.
struct BackCtx {
    grads: Vec<Option<Vec<f64>>>,
}

impl BackCtx {
    /// Accumulate into node `id` (allocating a zero buffer of `len` on first
    /// touch). `wants` is false for nodes that do not require gradients.
    fn accum(&mut self, id: usize, len: usize, wants: bool, f: impl FnOnce(&mut [f64])) {
        if !wants {
            return;
        }
        let buf = self.grads[id].get_or_insert_with(|| vec![0.0; len]);
        f(buf);
    }
}

type BackFn = Box<dyn Fn(&[f64], &mut BackCtx)>;

struct Node {
    shape: Vec<usize>,
    data: Rc<[f64]>,
    requires_grad: bool,
    back: Option<BackFn>,
    param: Option<ParamId>,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, usize>,
    consumed: bool,
}

/// Records a forward pass for one worker; dropped (or consumed by
/// [`Tape::backward`]) when the pass is done. Not `Send`: a tape never
/// crosses worker boundaries.
pub struct Tape {
    inner: RefCell<Inner>,
    grad_enabled: bool,
}

impl Tape {
    /// A tape that records backward closures.
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner::default()),
            grad_enabled: true,
        }
    }

    /// A forward-only tape: values are computed identically but no backward
    /// closures are recorded. Used by rollout workers.
    pub fn no_grad() -> Self {
        Tape {
            inner: RefCell::new(Inner::default()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    fn push(
        &self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        back: Option<BackFn>,
        param: Option<ParamId>,
    ) -> Tensor<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            data: Rc::from(data),
            requires_grad: requires_grad && self.grad_enabled,
            back: if self.grad_enabled { back } else { None },
            param,
        });
        Tensor { tape: self, id }
    }

    /// A constant (non-differentiable) tensor.
    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor<'_>> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(self.push(shape.to_vec(), data, false, None, None))
    }

    pub fn scalar(&self, v: f64) -> Tensor<'_> {
        self.push(vec![1], vec![v], false, None, None)
    }

    pub fn vector(&self, data: Vec<f64>) -> Tensor<'_> {
        let n = data.len();
        self.push(vec![n], data, false, None, None)
    }

    pub fn matrix(&self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor<'_>> {
        self.constant(data, &[rows, cols])
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor<'_> {
        let numel: usize = shape.iter().product();
        self.push(shape.to_vec(), vec![0.0; numel], false, None, None)
    }

    /// A differentiable leaf for a registered parameter. Repeated calls for
    /// the same parameter return the same node so its gradient accumulates
    /// across every use site.
    pub fn param<'t>(&'t self, set: &ParamSet, id: ParamId) -> Tensor<'t> {
        if let Some(&node) = self.inner.borrow().param_leaves.get(&id) {
            return Tensor { tape: self, id: node };
        }
        let entry = set.entry(id);
        let t = self.push(
            entry.shape.clone(),
            entry.data.clone(),
            true,
            None,
            Some(id),
        );
        self.inner.borrow_mut().param_leaves.insert(id, t.id);
        t
    }

    /// A differentiable leaf from raw data; used by gradient checks.
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor<'_>> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(self.push(shape.to_vec(), data, true, None, None))
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar loss. Consumes the recording: a second
    /// call without a fresh forward pass is an error. Gradients for every
    /// node listed in `keep` (plus every parameter leaf) are retained in the
    /// returned [`GradSet`]; all other intermediates are dropped as soon as
    /// they have been propagated.
    pub fn backward_keeping(&self, loss: &Tensor<'_>, keep: &[Tensor<'_>]) -> Result<GradSet> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if !self.grad_enabled {
            return Err(TensorError::TapeConsumed);
        }
        let loss_node = &inner.nodes[loss.id];
        if loss_node.data.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_node.shape.clone()));
        }
        inner.consumed = true;

        let n = inner.nodes.len();
        let mut keep_mask = vec![false; n];
        for t in keep {
            keep_mask[t.id] = true;
        }
        let mut ctx = BackCtx {
            grads: (0..n).map(|_| None).collect(),
        };
        ctx.grads[loss.id] = Some(vec![1.0]);

        let mut by_param: HashMap<ParamId, Vec<f64>> = HashMap::new();
        let mut kept: HashMap<usize, Vec<f64>> = HashMap::new();
        for id in (0..=loss.id).rev() {
            let Some(grad) = ctx.grads[id].take() else {
                continue;
            };
            let node = &inner.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Some(back) = &node.back {
                back(&grad, &mut ctx);
            }
            if let Some(pid) = node.param {
                by_param.insert(pid, grad);
            } else if keep_mask[id] {
                kept.insert(id, grad);
            }
        }
        Ok(GradSet { by_param, kept })
    }

    /// [`Tape::backward_keeping`] retaining only parameter gradients.
    pub fn backward(&self, loss: &Tensor<'_>) -> Result<GradSet> {
        self.backward_keeping(loss, &[])
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct GradSet {
    by_param: HashMap<ParamId, Vec<f64>>,
    kept: HashMap<usize, Vec<f64>>,
}

impl GradSet {
    /// Gradient of the loss w.r.t. a parameter, if it was reached.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(|v| v.as_slice())
    }

    /// Gradient w.r.t. a tensor passed in `keep` (leaves included).
    pub fn wrt(&self, t: &Tensor<'_>) -> Option<&[f64]> {
        self.kept.get(&t.id).map(|v| v.as_slice())
    }

    /// Dense per-parameter gradient buffers in id order; parameters the loss
    /// never reached get zero buffers. This is the payload layout used by
    /// gradient messages and the optimizer.
    pub fn dense(&self, set: &ParamSet) -> Vec<Vec<f64>> {
        set.ids()
            .map(|id| match self.by_param.get(&id) {
                Some(g) => g.clone(),
                None => vec![0.0; set.entry(id).data.len()],
            })
            .collect()
    }
}

/// A handle to one node on a tape. Cheap to copy; all arithmetic lives on
/// this type.
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

macro_rules! with_node {
    ($t:expr, $node:ident, $body:expr) => {{
        let inner = $t.tape.inner.borrow();
        let $node = &inner.nodes[$t.id];
        $body
    }};
}

impl<'t> Tensor<'t> {
    pub fn shape(&self) -> Vec<usize> {
        with_node!(self, n, n.shape.clone())
    }

    pub fn numel(&self) -> usize {
        with_node!(self, n, n.data.len())
    }

    pub fn data(&self) -> Rc<[f64]> {
        with_node!(self, n, Rc::clone(&n.data))
    }

    pub fn requires_grad(&self) -> bool {
        with_node!(self, n, n.requires_grad)
    }

    /// Value of a scalar (single-element) tensor.
    pub fn item(&self) -> f64 {
        let d = self.data();
        debug_assert_eq!(d.len(), 1, "item() on non-scalar tensor");
        d[0]
    }

    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape();
        match s.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::BadRank {
                op,
                expected: 2,
                shape: s,
            }),
        }
    }

    fn unop(
        &self,
        f: impl Fn(f64) -> f64,
        // df(x, y) where y = f(x)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor<'t> {
        let x = self.data();
        let shape = self.shape();
        let out: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            let len = x.len();
            let x = Rc::clone(&x);
            let y: Rc<[f64]> = Rc::from(out.clone());
            Some(Box::new(move |g, ctx| {
                ctx.accum(id, len, true, |acc| {
                    for i in 0..len {
                        acc[i] += g[i] * df(x[i], y[i]);
                    }
                });
            }))
        } else {
            None
        };
        self.tape.push(shape, out, rg, back, None)
    }

    fn binop(
        &self,
        other: Tensor<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        // (da, db) coefficients given (a, b, dOut)
        dfa: impl Fn(f64, f64) -> f64 + 'static,
        dfb: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Tensor<'t>> {
        let a = self.data();
        let b = other.data();
        let sa = self.shape();
        let sb = other.shape();
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        let out: Vec<f64> = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.requires_grad() || other.requires_grad();
        let back: Option<BackFn> = if rg {
            let (ia, ib) = (self.id, other.id);
            let (wa, wb) = (self.requires_grad(), other.requires_grad());
            let len = a.len();
            let (a, b) = (Rc::clone(&a), Rc::clone(&b));
            Some(Box::new(move |g, ctx| {
                ctx.accum(ia, len, wa, |acc| {
                    for i in 0..len {
                        acc[i] += g[i] * dfa(a[i], b[i]);
                    }
                });
                ctx.accum(ib, len, wb, |acc| {
                    for i in 0..len {
                        acc[i] += g[i] * dfb(a[i], b[i]);
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(sa, out, rg, back, None))
    }

    pub fn add(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binop(other, "add", |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binop(other, "sub", |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binop(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binop(
            other,
            "div",
            |a, b| a / b,
            |_, b| 1.0 / b,
            |a, b| -a / (b * b),
        )
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn min_with(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binop(
            other,
            "min_with",
            |a, b| a.min(b),
            |a, b| if a <= b { 1.0 } else { 0.0 },
            |a, b| if a <= b { 0.0 } else { 1.0 },
        )
    }

    pub fn neg(&self) -> Tensor<'t> {
        self.unop(|x| -x, |_, _| -1.0)
    }

    pub fn scale(&self, s: f64) -> Tensor<'t> {
        self.unop(move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<'t> {
        self.unop(move |x| x + s, |_, _| 1.0)
    }

    pub fn exp(&self) -> Tensor<'t> {
        self.unop(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<'t> {
        self.unop(|x| x.ln(), |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor<'t> {
        self.unop(|x| x.sqrt(), |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Tensor<'t> {
        self.unop(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn tanh(&self) -> Tensor<'t> {
        self.unop(|x| x.tanh(), |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<'t> {
        self.unop(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    /// Smooth GELU (tanh form).
    pub fn gelu(&self) -> Tensor<'t> {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        self.unop(
            |x| 0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh()),
            |x, _| {
                let u = C * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            },
        )
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<'t> {
        self.unop(
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        let (n, k) = self.rows_cols("matmul")?;
        let (k2, m) = other.rows_cols("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; n * m];
        dgemm_rowmajor(n, k, m, &a, &b, &mut out);
        let rg = self.requires_grad() || other.requires_grad();
        let back: Option<BackFn> = if rg {
            let (ia, ib) = (self.id, other.id);
            let (wa, wb) = (self.requires_grad(), other.requires_grad());
            let (a, b) = (Rc::clone(&a), Rc::clone(&b));
            Some(Box::new(move |g, ctx| {
                // dA += dC · Bᵀ
                ctx.accum(ia, n * k, wa, |acc| {
                    dgemm_rowmajor_bt(n, m, k, g, &b, acc);
                });
                // dB += Aᵀ · dC
                ctx.accum(ib, k * m, wb, |acc| {
                    dgemm_rowmajor_at(k, n, m, &a, g, acc);
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(vec![n, m], out, rg, back, None))
    }

    pub fn transpose(&self) -> Result<Tensor<'t>> {
        let (n, m) = self.rows_cols("transpose")?;
        let a = self.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = a[i * m + j];
            }
        }
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |g, ctx| {
                ctx.accum(id, n * m, true, |acc| {
                    for i in 0..n {
                        for j in 0..m {
                            acc[i * m + j] += g[j * n + i];
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(vec![m, n], out, rg, back, None))
    }

    /// Same data under a new shape (element count must match).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<'t>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::DataLength {
                len: self.numel(),
                shape: shape.to_vec(),
            });
        }
        let data = self.data().to_vec();
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |g, ctx| {
                ctx.accum(id, numel, true, |acc| {
                    for i in 0..numel {
                        acc[i] += g[i];
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(shape.to_vec(), data, rg, back, None))
    }

    /// Add a length-`cols` vector to every row of a rank-2 tensor.
    pub fn add_rowvec(&self, bias: Tensor<'t>) -> Result<Tensor<'t>> {
        let (n, m) = self.rows_cols("add_rowvec")?;
        let bs = bias.shape();
        if bs != [m] {
            return Err(TensorError::ShapeMismatch {
                op: "add_rowvec",
                lhs: vec![n, m],
                rhs: bs,
            });
        }
        let a = self.data();
        let b = bias.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = a[i * m + j] + b[j];
            }
        }
        let rg = self.requires_grad() || bias.requires_grad();
        let back: Option<BackFn> = if rg {
            let (ia, ib) = (self.id, bias.id);
            let (wa, wb) = (self.requires_grad(), bias.requires_grad());
            Some(Box::new(move |g, ctx| {
                ctx.accum(ia, n * m, wa, |acc| {
                    for i in 0..n * m {
                        acc[i] += g[i];
                    }
                });
                ctx.accum(ib, m, wb, |acc| {
                    for i in 0..n {
                        for j in 0..m {
                            acc[j] += g[i * m + j];
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(vec![n, m], out, rg, back, None))
    }

    /// Numerically stable softmax along `axis` (rank 1: axis 0; rank 2:
    /// axis 0 or 1). Each slice sums to one.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<'t>> {
        let s = self.shape();
        let (slices, stride, len) = slice_layout("softmax", &s, axis)?;
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for s_idx in 0..slices {
            let base = slice_base(s_idx, stride, len);
            let mut mx = f64::NEG_INFINITY;
            for i in 0..len {
                mx = mx.max(x[base + i * stride]);
            }
            let mut sum = 0.0;
            for i in 0..len {
                let e = (x[base + i * stride] - mx).exp();
                out[base + i * stride] = e;
                sum += e;
            }
            for i in 0..len {
                out[base + i * stride] /= sum;
            }
        }
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            let total = x.len();
            let y: Rc<[f64]> = Rc::from(out.clone());
            Some(Box::new(move |g, ctx| {
                ctx.accum(id, total, true, |acc| {
                    for s_idx in 0..slices {
                        let base = slice_base(s_idx, stride, len);
                        let mut dot = 0.0;
                        for i in 0..len {
                            let k = base + i * stride;
                            dot += g[k] * y[k];
                        }
                        for i in 0..len {
                            let k = base + i * stride;
                            acc[k] += y[k] * (g[k] - dot);
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(s, out, rg, back, None))
    }

    /// Numerically stable log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<'t>> {
        let s = self.shape();
        let (slices, stride, len) = slice_layout("log_softmax", &s, axis)?;
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for s_idx in 0..slices {
            let base = slice_base(s_idx, stride, len);
            let mut mx = f64::NEG_INFINITY;
            for i in 0..len {
                mx = mx.max(x[base + i * stride]);
            }
            let mut sum = 0.0;
            for i in 0..len {
                sum += (x[base + i * stride] - mx).exp();
            }
            let lse = mx + sum.ln();
            for i in 0..len {
                out[base + i * stride] = x[base + i * stride] - lse;
            }
        }
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            let total = x.len();
            let y: Rc<[f64]> = Rc::from(out.clone());
            Some(Box::new(move |g, ctx| {
                ctx.accum(id, total, true, |acc| {
                    for s_idx in 0..slices {
                        let base = slice_base(s_idx, stride, len);
                        let mut gsum = 0.0;
                        for i in 0..len {
                            gsum += g[base + i * stride];
                        }
                        for i in 0..len {
                            let k = base + i * stride;
                            acc[k] += g[k] - y[k].exp() * gsum;
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(s, out, rg, back, None))
    }

    /// Layer normalization over the last axis of a rank-2 tensor with
    /// learnable gain and bias vectors.
    pub fn layer_norm(&self, gain: Tensor<'t>, bias: Tensor<'t>, eps: f64) -> Result<Tensor<'t>> {
        let (n, m) = self.rows_cols("layer_norm")?;
        if gain.shape() != [m] || bias.shape() != [m] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: vec![n, m],
                rhs: gain.shape(),
            });
        }
        let x = self.data();
        let gv = gain.data();
        let bv = bias.data();
        let mut out = vec![0.0; n * m];
        let mut xhat = vec![0.0; n * m];
        let mut inv_sigma = vec![0.0; n];
        for i in 0..n {
            let row = &x[i * m..(i + 1) * m];
            let mu: f64 = row.iter().sum::<f64>() / m as f64;
            let var: f64 = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_sigma[i] = is;
            for j in 0..m {
                let h = (row[j] - mu) * is;
                xhat[i * m + j] = h;
                out[i * m + j] = gv[j] * h + bv[j];
            }
        }
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        let back: Option<BackFn> = if rg {
            let (ix, ig, ib) = (self.id, gain.id, bias.id);
            let (wx, wg, wb) = (
                self.requires_grad(),
                gain.requires_grad(),
                bias.requires_grad(),
            );
            let gv = Rc::clone(&gv);
            let xhat: Rc<[f64]> = Rc::from(xhat);
            let inv_sigma: Rc<[f64]> = Rc::from(inv_sigma);
            Some(Box::new(move |g, ctx| {
                ctx.accum(ix, n * m, wx, |acc| {
                    for i in 0..n {
                        let mut m1 = 0.0; // mean(g ⊙ gain)
                        let mut m2 = 0.0; // mean(g ⊙ gain ⊙ xhat)
                        for j in 0..m {
                            let gg = g[i * m + j] * gv[j];
                            m1 += gg;
                            m2 += gg * xhat[i * m + j];
                        }
                        m1 /= m as f64;
                        m2 /= m as f64;
                        for j in 0..m {
                            let gg = g[i * m + j] * gv[j];
                            acc[i * m + j] +=
                                (gg - m1 - xhat[i * m + j] * m2) * inv_sigma[i];
                        }
                    }
                });
                ctx.accum(ig, m, wg, |acc| {
                    for i in 0..n {
                        for j in 0..m {
                            acc[j] += g[i * m + j] * xhat[i * m + j];
                        }
                    }
                });
                ctx.accum(ib, m, wb, |acc| {
                    for i in 0..n {
                        for j in 0..m {
                            acc[j] += g[i * m + j];
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(vec![n, m], out, rg, back, None))
    }

    pub fn sum(&self) -> Tensor<'t> {
        let x = self.data();
        let total: f64 = x.iter().sum();
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            let len = x.len();
            Some(Box::new(move |g, ctx| {
                ctx.accum(id, len, true, |acc| {
                    for v in acc.iter_mut() {
                        *v += g[0];
                    }
                });
            }))
        } else {
            None
        };
        self.tape.push(vec![1], vec![total], rg, back, None)
    }

    pub fn mean(&self) -> Tensor<'t> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean over the row axis of a rank-2 tensor: `[n, d] -> [d]`.
    pub fn mean_axis0(&self) -> Result<Tensor<'t>> {
        let (n, m) = self.rows_cols("mean_axis0")?;
        if n == 0 {
            return Err(TensorError::Empty("mean_axis0"));
        }
        let x = self.data();
        let mut out = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                out[j] += x[i * m + j];
            }
        }
        for v in out.iter_mut() {
            *v /= n as f64;
        }
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |g, ctx| {
                ctx.accum(id, n * m, true, |acc| {
                    let inv = 1.0 / n as f64;
                    for i in 0..n {
                        for j in 0..m {
                            acc[i * m + j] += g[j] * inv;
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(vec![m], out, rg, back, None))
    }

    /// Rows `r0..r1` of a rank-2 tensor.
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Tensor<'t>> {
        let (n, m) = self.rows_cols("slice_rows")?;
        if r0 >= r1 || r1 > n {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_rows",
                index: r1,
                shape: vec![n, m],
            });
        }
        let x = self.data();
        let rows = r1 - r0;
        let out = x[r0 * m..r1 * m].to_vec();
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |g, ctx| {
                ctx.accum(id, n * m, true, |acc| {
                    for i in 0..rows * m {
                        acc[r0 * m + i] += g[i];
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(vec![rows, m], out, rg, back, None))
    }

    /// Columns `c0..c1` of a rank-2 tensor.
    pub fn slice_cols(&self, c0: usize, c1: usize) -> Result<Tensor<'t>> {
        let (n, m) = self.rows_cols("slice_cols")?;
        if c0 >= c1 || c1 > m {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_cols",
                index: c1,
                shape: vec![n, m],
            });
        }
        let x = self.data();
        let cols = c1 - c0;
        let mut out = vec![0.0; n * cols];
        for i in 0..n {
            out[i * cols..(i + 1) * cols].copy_from_slice(&x[i * m + c0..i * m + c1]);
        }
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |g, ctx| {
                ctx.accum(id, n * m, true, |acc| {
                    for i in 0..n {
                        for j in 0..cols {
                            acc[i * m + c0 + j] += g[i * cols + j];
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(vec![n, cols], out, rg, back, None))
    }

    /// Row `i` of a rank-2 tensor as a vector.
    pub fn row(&self, i: usize) -> Result<Tensor<'t>> {
        let (_, m) = self.rows_cols("row")?;
        let r = self.slice_rows(i, i + 1)?;
        r.reshape(&[m])
    }

    /// Element `i` of a rank-1 tensor as a scalar tensor.
    pub fn at(&self, i: usize) -> Result<Tensor<'t>> {
        let s = self.shape();
        if s.len() != 1 {
            return Err(TensorError::BadRank {
                op: "at",
                expected: 1,
                shape: s,
            });
        }
        if i >= s[0] {
            return Err(TensorError::IndexOutOfBounds {
                op: "at",
                index: i,
                shape: s,
            });
        }
        let x = self.data();
        let n = s[0];
        let out = vec![x[i]];
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |g, ctx| {
                ctx.accum(id, n, true, |acc| {
                    acc[i] += g[0];
                });
            }))
        } else {
            None
        };
        Ok(self.tape.push(vec![1], out, rg, back, None))
    }

    /// Stack rank-1 or rank-2 tensors along the row axis.
    pub fn concat_rows(parts: &[Tensor<'t>]) -> Result<Tensor<'t>> {
        if parts.is_empty() {
            return Err(TensorError::Empty("concat_rows"));
        }
        let tape = parts[0].tape;
        let cols = {
            let s = parts[0].shape();
            *s.last().unwrap()
        };
        let mut total_rows = 0;
        for p in parts {
            let s = p.shape();
            let (r, c) = match s.as_slice() {
                [c] => (1, *c),
                [r, c] => (*r, *c),
                _ => {
                    return Err(TensorError::BadRank {
                        op: "concat_rows",
                        expected: 2,
                        shape: s,
                    })
                }
            };
            if c != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![total_rows, cols],
                    rhs: s,
                });
            }
            total_rows += r;
        }
        let mut out = Vec::with_capacity(total_rows * cols);
        for p in parts {
            out.extend_from_slice(&p.data());
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        let back: Option<BackFn> = if rg {
            let meta: Vec<(usize, usize, bool)> = parts
                .iter()
                .map(|p| (p.id, p.numel(), p.requires_grad()))
                .collect();
            Some(Box::new(move |g, ctx| {
                let mut off = 0;
                for &(id, len, wants) in &meta {
                    ctx.accum(id, len, wants, |acc| {
                        for i in 0..len {
                            acc[i] += g[off + i];
                        }
                    });
                    off += len;
                }
            }))
        } else {
            None
        };
        Ok(tape.push(vec![total_rows, cols], out, rg, back, None))
    }

    /// Stack rank-2 tensors side by side along the column axis.
    pub fn concat_cols(parts: &[Tensor<'t>]) -> Result<Tensor<'t>> {
        if parts.is_empty() {
            return Err(TensorError::Empty("concat_cols"));
        }
        let tape = parts[0].tape;
        let (rows, _) = parts[0].rows_cols("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total_cols = 0;
        for p in parts {
            let (r, c) = p.rows_cols("concat_cols")?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape(),
                    rhs: p.shape(),
                });
            }
            widths.push(c);
            total_cols += c;
        }
        let mut out = vec![0.0; rows * total_cols];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(widths.iter()) {
            let d = p.data();
            for i in 0..rows {
                out[i * total_cols + off..i * total_cols + off + w]
                    .copy_from_slice(&d[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        let back: Option<BackFn> = if rg {
            let meta: Vec<(usize, usize, bool)> = parts
                .iter()
                .zip(widths.iter())
                .map(|(p, &w)| (p.id, w, p.requires_grad()))
                .collect();
            Some(Box::new(move |g, ctx| {
                let mut off = 0;
                for &(id, w, wants) in &meta {
                    ctx.accum(id, rows * w, wants, |acc| {
                        for i in 0..rows {
                            for j in 0..w {
                                acc[i * w + j] += g[i * total_cols + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }))
        } else {
            None
        };
        Ok(tape.push(vec![rows, total_cols], out, rg, back, None))
    }

    /// True when two handles refer to the same tape node.
    pub fn same_node(&self, other: &Tensor<'t>) -> bool {
        std::ptr::eq(self.tape, other.tape) && self.id == other.id
    }

    /// Concatenate flattened tensors into one vector.
    pub fn concat_flat(parts: &[Tensor<'t>]) -> Result<Tensor<'t>> {
        if parts.is_empty() {
            return Err(TensorError::Empty("concat_flat"));
        }
        let tape = parts[0].tape;
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&p.data());
        }
        let total = out.len();
        let rg = parts.iter().any(|p| p.requires_grad());
        let back: Option<BackFn> = if rg {
            let meta: Vec<(usize, usize, bool)> = parts
                .iter()
                .map(|p| (p.id, p.numel(), p.requires_grad()))
                .collect();
            Some(Box::new(move |g, ctx| {
                let mut off = 0;
                for &(id, len, wants) in &meta {
                    ctx.accum(id, len, wants, |acc| {
                        for i in 0..len {
                            acc[i] += g[off + i];
                        }
                    });
                    off += len;
                }
            }))
        } else {
            None
        };
        Ok(tape.push(vec![total], out, rg, back, None))
    }
}

/// Slice bookkeeping for axis reductions over rank-1/2 tensors:
/// returns (number of slices, stride within a slice, slice length).
fn slice_layout(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    match shape {
        [n] => {
            if axis != 0 {
                return Err(TensorError::BadAxis {
                    op,
                    axis,
                    shape: shape.to_vec(),
                });
            }
            Ok((1, 1, *n))
        }
        [n, m] => match axis {
            0 => Ok((*m, *m, *n)), // column slices
            1 => Ok((*n, 1, *m)),  // row slices
            _ => Err(TensorError::BadAxis {
                op,
                axis,
                shape: shape.to_vec(),
            }),
        },
        _ => Err(TensorError::BadRank {
            op,
            expected: 2,
            shape: shape.to_vec(),
        }),
    }
}

#[inline]
fn slice_base(slice_idx: usize, stride: usize, len: usize) -> usize {
    if stride == 1 {
        slice_idx * len
    } else {
        slice_idx
    }
}

/// C[n×m] += 0 then A[n×k]·B[k×m], all row-major.
fn dgemm_rowmajor(n: usize, k: usize, m: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            m as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// C[n×k] += A[n×m]·Bᵀ where B is [k×m] row-major.
fn dgemm_rowmajor_bt(n: usize, m: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            n,
            m,
            k,
            1.0,
            a.as_ptr(),
            m as isize,
            1,
            b.as_ptr(),
            1,
            m as isize,
            1.0,
            c.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// C[k×m] += Aᵀ·G where A is [n×k] and G is [n×m], all row-major.
fn dgemm_rowmajor_at(k: usize, n: usize, m: usize, a: &[f64], g: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            k,
            n,
            m,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            g.as_ptr(),
            m as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}
