//! Define-by-run tape and reverse-mode differentiation.
//!
//! A [`Graph`] owns every tensor produced during one forward pass. Operations
//! append nodes in topological order; [`Graph::backward`] sweeps the tape once
//! in reverse, accumulating leaf gradients additively. Graphs are rebuilt each
//! training step, which makes unrolling over arbitrary sequence lengths
//! trivial.
//!
//! Broadcasting is restricted to the scalar and trailing-dimension cases: a
//! right-hand operand may be a suffix of the left shape (or vice versa), and
//! the smaller side is tiled over the leading dimensions.

use super::{c, numel, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Constant,
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    /// y = mul * x + add; the shift drops out of the gradient
    Affine { x: usize, mul: F },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Log { x: usize },
    Sqrt { x: usize },
    Square { x: usize },
    Abs { x: usize },
    Clamp { x: usize, lo: F, hi: F },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize, len: usize },
    Broadcast { x: usize },
    Sum { x: usize, axis: Option<usize> },
    Mean { x: usize, axis: Option<usize> },
    /// Population variance (divide by N) along one axis.
    Variance { x: usize, axis: usize },
    /// Per-element median across a stack of same-shaped tensors.
    /// `picks` records the one or two source parts selected per element.
    MedianStack { parts: Vec<usize>, picks: Vec<(u32, u32)> },
}

struct Node<F> {
    value: Tensor<F>,
    grad: Option<Vec<F>>,
    op: Op<F>,
    requires_grad: bool,
    is_leaf: bool,
}

/// Operation selector for the generic [`Graph::forward_eval`] entry point.
#[derive(Clone, Debug)]
pub enum OpKind {
    Matmul,
    Add,
    Sub,
    Mul,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Sigmoid,
    Tanh,
    Log,
    Sqrt,
    Square,
    Abs,
    Mean { axis: Option<usize> },
    Sum { axis: Option<usize> },
    Variance { axis: usize },
    Broadcast { shape: Vec<usize> },
}

pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
    recording: bool,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    /// Recording graph: forward ops store backward metadata.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::with_capacity(256),
            recording: true,
        }
    }

    /// Inference graph: values only, `backward` is unavailable.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::with_capacity(256),
            recording: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable parameter. Gradients accumulate here.
    pub fn leaf(&mut self, value: Tensor<F>) -> Result<Var> {
        self.insert(value, Op::Leaf, self.recording, true)
    }

    /// Non-trainable input; backward never descends into it.
    pub fn constant(&mut self, value: Tensor<F>) -> Result<Var> {
        self.insert(value, Op::Constant, false, false)
    }

    pub fn constant_scalar(&mut self, v: F) -> Result<Var> {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> Result<F> {
        self.nodes[v.0].value.scalar_value()
    }

    /// Gradient of the last `backward` target with respect to `v`, if any.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| {
            Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape matches value")
        })
    }

    /// Like [`Graph::grad`] but yields a zero tensor when no gradient
    /// reached `v` (e.g. a branch pruned by a median pick).
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<F> {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    pub fn zero_grad(&mut self, v: Var) {
        self.nodes[v.0].grad = None;
    }

    fn insert(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool, is_leaf: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::domain("non-finite value produced"));
        }
        let (op, requires_grad) = if self.recording {
            (op, requires_grad)
        } else {
            (Op::Constant, false)
        };
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
            is_leaf: is_leaf && self.recording,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_op(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[usize]) -> Result<Var> {
        let rg = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.insert(value, op, rg, false)
    }

    // ── Elementwise binary ──────────────────────────────────────────────

    /// Tile `v` over leading dimensions so its shape becomes `target`.
    /// The current shape must be a trailing suffix of `target` (a scalar is a
    /// suffix of everything).
    pub fn broadcast_to(&mut self, v: Var, target: &[usize]) -> Result<Var> {
        let src = self.value(v).shape().to_vec();
        if src == target {
            return Ok(v);
        }
        if !is_suffix(&src, target) {
            return Err(Error::shape(format!(
                "cannot broadcast {src:?} to {target:?}"
            )));
        }
        let ssz = numel(&src);
        let lead = numel(target) / ssz;
        let xd = self.value(v).data();
        let mut out = Vec::with_capacity(lead * ssz);
        for _ in 0..lead {
            out.extend_from_slice(xd);
        }
        let t = Tensor::new(target.to_vec(), out)?;
        self.push_op(t, Op::Broadcast { x: v.0 }, &[v.0])
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        make: fn(usize, usize) -> Op<F>,
        f: fn(F, F) -> F,
    ) -> Result<Var> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        let (a, b) = if sa == sb {
            (a, b)
        } else if is_suffix(&sb, &sa) {
            (a, self.broadcast_to(b, &sa)?)
        } else if is_suffix(&sa, &sb) {
            (self.broadcast_to(a, &sb)?, b)
        } else {
            return Err(Error::shape(format!("{name}: shapes {sa:?} vs {sb:?}")));
        };
        let (av, bv) = (self.value(a), self.value(b));
        let data: Vec<F> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push_op(t, make(a.0, b.0), &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |a, b| Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |a, b| Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |a, b| Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|&y| y == F::zero()) {
            return Err(Error::domain("division by zero"));
        }
        self.binary(a, b, "div", |a, b| Op::Div { a, b }, |x, y| x / y)
    }

    // ── Matmul ──────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        // beta = 0 means the output is write-only, so skip the zero fill.
        let mut out: Vec<F> = Vec::with_capacity(m * n);
        unsafe {
            F::gemm(
                m,
                k,
                n,
                F::one(),
                self.value(a).data().as_ptr(),
                k as isize,
                1,
                self.value(b).data().as_ptr(),
                n as isize,
                1,
                F::zero(),
                out.as_mut_ptr(),
                n as isize,
                1,
            );
            out.set_len(m * n);
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push_op(t, Op::Matmul { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    // ── Elementwise unary ───────────────────────────────────────────────

    fn unary(&mut self, x: Var, make: fn(usize) -> Op<F>, f: impl Fn(F) -> F) -> Result<Var> {
        let xv = self.value(x);
        let data: Vec<F> = xv.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        self.push_op(t, make(x.0), &[x.0])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |x| Op::Sigmoid { x }, |v| {
            F::one() / (F::one() + (-v).exp())
        })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        // (1 - e) / (1 + e) with e = exp(-2|v|), sign restored at the end:
        // one exp call instead of libm's tanh (roughly twice as fast), and
        // e stays in (0, 1] so neither side of the division can overflow.
        self.unary(x, |x| Op::Tanh { x }, |v| {
            let e = (-(v.abs() + v.abs())).exp();
            ((F::one() - e) / (F::one() + e)).copysign(v)
        })
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= F::zero()) {
            return Err(Error::domain("log of non-positive value"));
        }
        self.unary(x, |x| Op::Log { x }, |v| v.ln())
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v < F::zero()) {
            return Err(Error::domain("sqrt of negative value"));
        }
        self.unary(x, |x| Op::Sqrt { x }, |v| v.sqrt())
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |x| Op::Square { x }, |v| v * v)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |x| Op::Abs { x }, |v| v.abs())
    }

    pub fn clamp(&mut self, x: Var, lo: F, hi: F) -> Result<Var> {
        let xv = self.value(x);
        let data: Vec<F> = xv.data().iter().map(|&v| v.max(lo).min(hi)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        self.push_op(t, Op::Clamp { x: x.0, lo, hi }, &[x.0])
    }

    /// y = mul * x + add, with scalar constants.
    pub fn affine(&mut self, x: Var, mul: F, add: F) -> Result<Var> {
        let xv = self.value(x);
        let data: Vec<F> = xv.data().iter().map(|&v| mul * v + add).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        self.push_op(t, Op::Affine { x: x.0, mul }, &[x.0])
    }

    /// y = s * x
    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        self.affine(x, s, F::zero())
    }

    /// y = 1 - x
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -F::one(), F::one())
    }

    // ── Shape ops ───────────────────────────────────────────────────────

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::shape(format!(
                "concat axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(format!(
                    "concat: incompatible shapes {s:?} vs {first:?} on axis {axis}"
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &p in parts {
                let pv = self.value(p);
                let block = pv.shape()[axis] * inner;
                out.extend_from_slice(&pv.data()[o * block..(o + 1) * block]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let t = Tensor::new(out_shape, out)?;
        self.push_op(t, Op::Concat { parts: ids.clone(), axis }, &ids)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape(format!(
                "slice [{start}..{}] on axis {axis} of {s:?}",
                start + len
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut out_shape = s;
        out_shape[axis] = len;
        let t = Tensor::new(out_shape, out)?;
        self.push_op(t, Op::Slice { x: x.0, axis, start, len }, &[x.0])
    }

    // ── Reductions ──────────────────────────────────────────────────────

    fn reduce_shape(&self, x: Var, axis: Option<usize>) -> Result<Vec<usize>> {
        let s = self.value(x).shape();
        match axis {
            None => Ok(vec![]),
            Some(ax) if ax < s.len() => {
                let mut out = s.to_vec();
                out.remove(ax);
                Ok(out)
            }
            Some(ax) => Err(Error::shape(format!(
                "reduce axis {ax} out of range for shape {s:?}"
            ))),
        }
    }

    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let out_shape = self.reduce_shape(x, axis)?;
        let xv = self.value(x);
        let data = match axis {
            None => {
                let mut acc = F::zero();
                for &v in xv.data() {
                    acc = acc + v;
                }
                vec![acc]
            }
            Some(ax) => reduce_axis(xv, ax, |acc, v| acc + v, F::zero()),
        };
        let t = Tensor::new(out_shape, data)?;
        self.push_op(t, Op::Sum { x: x.0, axis }, &[x.0])
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let out_shape = self.reduce_shape(x, axis)?;
        let xv = self.value(x);
        let n = match axis {
            None => xv.size(),
            Some(ax) => xv.shape()[ax],
        };
        let inv = F::one() / c::<F>(n as f64);
        let data = match axis {
            None => {
                let mut acc = F::zero();
                for &v in xv.data() {
                    acc = acc + v;
                }
                vec![acc * inv]
            }
            Some(ax) => {
                let mut sums = reduce_axis(xv, ax, |acc, v| acc + v, F::zero());
                for v in &mut sums {
                    *v = *v * inv;
                }
                sums
            }
        };
        let t = Tensor::new(out_shape, data)?;
        self.push_op(t, Op::Mean { x: x.0, axis }, &[x.0])
    }

    /// Population variance along `axis` (divide by N, not N-1).
    pub fn variance(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out_shape = self.reduce_shape(x, Some(axis))?;
        let xv = self.value(x);
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let inv = F::one() / c::<F>(n as f64);
        let xd = xv.data();
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..inner {
                let mut mean = F::zero();
                for i in 0..n {
                    mean = mean + xd[(o * n + i) * inner + j];
                }
                mean = mean * inv;
                let mut var = F::zero();
                for i in 0..n {
                    let d = xd[(o * n + i) * inner + j] - mean;
                    var = var + d * d;
                }
                out[o * inner + j] = var * inv;
            }
        }
        let t = Tensor::new(out_shape, out)?;
        self.push_op(t, Op::Variance { x: x.0, axis }, &[x.0])
    }

    /// Per-element median across same-shaped tensors. Even counts take the
    /// midpoint of the two middle values; gradient splits between them.
    pub fn median_stack(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("median of zero tensors"));
        }
        let shape = self.value(parts[0]).shape().to_vec();
        for &p in parts {
            if self.value(p).shape() != shape.as_slice() {
                return Err(Error::shape("median_stack: shapes differ"));
            }
        }
        let count = parts.len();
        let elems = numel(&shape);
        let mut out = vec![F::zero(); elems];
        let mut picks = Vec::with_capacity(elems);
        let mut buf: Vec<(F, u32)> = Vec::with_capacity(count);
        let half = c::<F>(0.5);
        for e in 0..elems {
            buf.clear();
            for (pi, &p) in parts.iter().enumerate() {
                buf.push((self.value(p).data()[e], pi as u32));
            }
            // deterministic tie-break on the part index
            buf.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            if count % 2 == 1 {
                let (v, i) = buf[count / 2];
                out[e] = v;
                picks.push((i, i));
            } else {
                let (v1, i1) = buf[count / 2 - 1];
                let (v2, i2) = buf[count / 2];
                out[e] = (v1 + v2) * half;
                picks.push((i1, i2));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let t = Tensor::new(shape, out)?;
        self.push_op(t, Op::MedianStack { parts: ids.clone(), picks }, &ids)
    }

    // ── Generic entry point ─────────────────────────────────────────────

    /// Apply `kind` to `inputs`. Thin dispatcher over the typed methods.
    pub fn forward_eval(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let need = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::contract(format!(
                    "{kind:?} expects {n} inputs, got {}",
                    inputs.len()
                )))
            }
        };
        match kind {
            OpKind::Matmul => {
                need(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                need(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                need(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                need(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Concat { axis } => self.concat(inputs, axis),
            OpKind::Slice { axis, start, len } => {
                need(1)?;
                self.slice(inputs[0], axis, start, len)
            }
            OpKind::Sigmoid => {
                need(1)?;
                self.sigmoid(inputs[0])
            }
            OpKind::Tanh => {
                need(1)?;
                self.tanh(inputs[0])
            }
            OpKind::Log => {
                need(1)?;
                self.log(inputs[0])
            }
            OpKind::Sqrt => {
                need(1)?;
                self.sqrt(inputs[0])
            }
            OpKind::Square => {
                need(1)?;
                self.square(inputs[0])
            }
            OpKind::Abs => {
                need(1)?;
                self.abs(inputs[0])
            }
            OpKind::Mean { axis } => {
                need(1)?;
                self.mean(inputs[0], axis)
            }
            OpKind::Sum { axis } => {
                need(1)?;
                self.sum(inputs[0], axis)
            }
            OpKind::Variance { axis } => {
                need(1)?;
                self.variance(inputs[0], axis)
            }
            OpKind::Broadcast { ref shape } => {
                need(1)?;
                self.broadcast_to(inputs[0], shape)
            }
        }
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate
    /// additively across calls; intermediate gradients are recomputed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording {
            return Err(Error::contract("backward on an inference graph"));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::contract(format!(
                "backward target must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        // Lift grads out of the nodes; keep existing leaf grads for additive
        // accumulation, reset intermediates.
        let mut grads: Vec<Option<Vec<F>>> = self
            .nodes
            .iter_mut()
            .map(|n| if n.is_leaf { n.grad.take() } else { None })
            .collect();
        accumulate(&mut grads[loss.0], &[F::one()], 1);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad && !self.nodes[i].is_leaf {
                continue;
            }
            if self.nodes[i].is_leaf {
                continue; // nothing upstream of a leaf
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(&self.nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }
}

// ── Free helpers ────────────────────────────────────────────────────────

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && &big[big.len() - small.len()..] == small
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduce_axis<F: Real>(x: &Tensor<F>, axis: usize, f: fn(F, F) -> F, init: F) -> Vec<F> {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![init; outer * inner];
    for o in 0..outer {
        for i in 0..n {
            let base = (o * n + i) * inner;
            let orow = o * inner;
            for j in 0..inner {
                out[orow + j] = f(out[orow + j], xd[base + j]);
            }
        }
    }
    out
}

fn accumulate<F: Real>(slot: &mut Option<Vec<F>>, contrib: &[F], len: usize) {
    match slot {
        Some(g) => {
            for (gi, &ci) in g.iter_mut().zip(contrib) {
                *gi = *gi + ci;
            }
        }
        None if contrib.len() == len => *slot = Some(contrib.to_vec()),
        None => {
            let mut g = vec![F::zero(); len];
            g[..contrib.len()].copy_from_slice(contrib);
            *slot = Some(g);
        }
    }
}

fn slot_mut<'a, F: Real>(grads: &'a mut [Option<Vec<F>>], id: usize, len: usize) -> &'a mut [F] {
    grads[id].get_or_insert_with(|| vec![F::zero(); len])
}

/// Propagate `g` (gradient of node `i`'s output) into the parents of `i`.
fn backprop_node<F: Real>(nodes: &[Node<F>], i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
    let rg = |id: usize| nodes[id].requires_grad || nodes[id].is_leaf;
    let val = |id: usize| nodes[id].value.data();
    let len = |id: usize| nodes[id].value.size();
    match &nodes[i].op {
        Op::Leaf | Op::Constant => {}
        Op::Matmul { a, b } => {
            let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            if rg(*a) {
                // dA += dC @ B^T
                let da = slot_mut(grads, *a, m * k);
                unsafe {
                    F::gemm(
                        m,
                        n,
                        k,
                        F::one(),
                        g.as_ptr(),
                        n as isize,
                        1,
                        val(*b).as_ptr(),
                        1,
                        n as isize,
                        F::one(),
                        da.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
            }
            if rg(*b) {
                // dB += A^T @ dC
                let db = slot_mut(grads, *b, k * n);
                unsafe {
                    F::gemm(
                        k,
                        m,
                        n,
                        F::one(),
                        val(*a).as_ptr(),
                        1,
                        k as isize,
                        g.as_ptr(),
                        n as isize,
                        1,
                        F::one(),
                        db.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
        Op::Add { a, b } => {
            for &p in &[*a, *b] {
                if rg(p) {
                    let gp = slot_mut(grads, p, g.len());
                    for (x, &gi) in gp.iter_mut().zip(g) {
                        *x = *x + gi;
                    }
                }
            }
        }
        Op::Sub { a, b } => {
            if rg(*a) {
                let gp = slot_mut(grads, *a, g.len());
                for (x, &gi) in gp.iter_mut().zip(g) {
                    *x = *x + gi;
                }
            }
            if rg(*b) {
                let gp = slot_mut(grads, *b, g.len());
                for (x, &gi) in gp.iter_mut().zip(g) {
                    *x = *x - gi;
                }
            }
        }
        Op::Mul { a, b } => {
            if rg(*a) {
                let bv = val(*b);
                let gp = slot_mut(grads, *a, g.len());
                for ((x, &gi), &bi) in gp.iter_mut().zip(g).zip(bv) {
                    *x = *x + gi * bi;
                }
            }
            if rg(*b) {
                let av = val(*a);
                let gp = slot_mut(grads, *b, g.len());
                for ((x, &gi), &ai) in gp.iter_mut().zip(g).zip(av) {
                    *x = *x + gi * ai;
                }
            }
        }
        Op::Div { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            if rg(*a) {
                let gp = slot_mut(grads, *a, g.len());
                for ((x, &gi), &bi) in gp.iter_mut().zip(g).zip(bv) {
                    *x = *x + gi / bi;
                }
            }
            if rg(*b) {
                let gp = slot_mut(grads, *b, g.len());
                for i2 in 0..g.len() {
                    gp[i2] = gp[i2] - g[i2] * av[i2] / (bv[i2] * bv[i2]);
                }
            }
        }
        Op::Affine { x, mul } => {
            if rg(*x) {
                let gp = slot_mut(grads, *x, g.len());
                for (xg, &gi) in gp.iter_mut().zip(g) {
                    *xg = *xg + *mul * gi;
                }
            }
        }
        Op::Sigmoid { x } => {
            if rg(*x) {
                let y = val(i);
                let gp = slot_mut(grads, *x, g.len());
                for ((xg, &gi), &yi) in gp.iter_mut().zip(g).zip(y) {
                    *xg = *xg + gi * yi * (F::one() - yi);
                }
            }
        }
        Op::Tanh { x } => {
            if rg(*x) {
                let y = val(i);
                let gp = slot_mut(grads, *x, g.len());
                for ((xg, &gi), &yi) in gp.iter_mut().zip(g).zip(y) {
                    *xg = *xg + gi * (F::one() - yi * yi);
                }
            }
        }
        Op::Log { x } => {
            if rg(*x) {
                let xv = val(*x);
                let gp = slot_mut(grads, *x, g.len());
                for ((xg, &gi), &xi) in gp.iter_mut().zip(g).zip(xv) {
                    *xg = *xg + gi / xi;
                }
            }
        }
        Op::Sqrt { x } => {
            if rg(*x) {
                let y = val(i);
                let half = c::<F>(0.5);
                let gp = slot_mut(grads, *x, g.len());
                for ((xg, &gi), &yi) in gp.iter_mut().zip(g).zip(y) {
                    // subgradient 0 at the origin keeps norms of identical
                    // sequences from producing NaN
                    if yi > F::zero() {
                        *xg = *xg + gi * half / yi;
                    }
                }
            }
        }
        Op::Square { x } => {
            if rg(*x) {
                let xv = val(*x);
                let two = c::<F>(2.0);
                let gp = slot_mut(grads, *x, g.len());
                for ((xg, &gi), &xi) in gp.iter_mut().zip(g).zip(xv) {
                    *xg = *xg + gi * two * xi;
                }
            }
        }
        Op::Abs { x } => {
            if rg(*x) {
                let xv = val(*x);
                let gp = slot_mut(grads, *x, g.len());
                for ((xg, &gi), &xi) in gp.iter_mut().zip(g).zip(xv) {
                    let s = if xi > F::zero() {
                        F::one()
                    } else if xi < F::zero() {
                        -F::one()
                    } else {
                        F::zero()
                    };
                    *xg = *xg + gi * s;
                }
            }
        }
        Op::Clamp { x, lo, hi } => {
            if rg(*x) {
                let xv = val(*x);
                let gp = slot_mut(grads, *x, g.len());
                for ((xg, &gi), &xi) in gp.iter_mut().zip(g).zip(xv) {
                    if xi >= *lo && xi <= *hi {
                        *xg = *xg + gi;
                    }
                }
            }
        }
        Op::Broadcast { x } => {
            if rg(*x) {
                let n = len(*x);
                let gp = slot_mut(grads, *x, n);
                for (chunk_i, &gi) in g.iter().enumerate() {
                    gp[chunk_i % n] = gp[chunk_i % n] + gi;
                }
            }
        }
        Op::Concat { parts, axis } => {
            let shape = nodes[i].value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis + 1..].iter().product();
            let mut offset = 0usize; // within one outer row of the output
            let row = shape[*axis] * inner;
            for &p in parts {
                let block = nodes[p].value.shape()[*axis] * inner;
                if rg(p) {
                    let n = len(p);
                    let gp = slot_mut(grads, p, n);
                    for o in 0..outer {
                        let src = o * row + offset;
                        let dst = o * block;
                        for j in 0..block {
                            gp[dst + j] = gp[dst + j] + g[src + j];
                        }
                    }
                }
                offset += block;
            }
        }
        Op::Slice { x, axis, start, len: slen } => {
            if rg(*x) {
                let xs = nodes[*x].value.shape();
                let (outer, n_ax, inner) = axis_split(xs, *axis);
                let n = len(*x);
                let gp = slot_mut(grads, *x, n);
                for o in 0..outer {
                    let dst = (o * n_ax + start) * inner;
                    let src = o * slen * inner;
                    for j in 0..slen * inner {
                        gp[dst + j] = gp[dst + j] + g[src + j];
                    }
                }
            }
        }
        Op::Sum { x, axis } => {
            if rg(*x) {
                let n = len(*x);
                let gp = slot_mut(grads, *x, n);
                match axis {
                    None => {
                        let gi = g[0];
                        for xg in gp.iter_mut() {
                            *xg = *xg + gi;
                        }
                    }
                    Some(ax) => {
                        let (outer, nax, inner) = axis_split(nodes[*x].value.shape(), *ax);
                        for o in 0..outer {
                            for i2 in 0..nax {
                                let base = (o * nax + i2) * inner;
                                for j in 0..inner {
                                    gp[base + j] = gp[base + j] + g[o * inner + j];
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::Mean { x, axis } => {
            if rg(*x) {
                let n = len(*x);
                let gp = slot_mut(grads, *x, n);
                match axis {
                    None => {
                        let gi = g[0] / c::<F>(n as f64);
                        for xg in gp.iter_mut() {
                            *xg = *xg + gi;
                        }
                    }
                    Some(ax) => {
                        let (outer, nax, inner) = axis_split(nodes[*x].value.shape(), *ax);
                        let inv = F::one() / c::<F>(nax as f64);
                        for o in 0..outer {
                            for i2 in 0..nax {
                                let base = (o * nax + i2) * inner;
                                for j in 0..inner {
                                    gp[base + j] = gp[base + j] + g[o * inner + j] * inv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::Variance { x, axis } => {
            if rg(*x) {
                let xv = val(*x);
                let (outer, nax, inner) = axis_split(nodes[*x].value.shape(), *axis);
                let inv = F::one() / c::<F>(nax as f64);
                let two = c::<F>(2.0);
                let n = len(*x);
                let gp = slot_mut(grads, *x, n);
                for o in 0..outer {
                    for j in 0..inner {
                        let mut mean = F::zero();
                        for i2 in 0..nax {
                            mean = mean + xv[(o * nax + i2) * inner + j];
                        }
                        mean = mean * inv;
                        let go = g[o * inner + j] * two * inv;
                        for i2 in 0..nax {
                            let idx = (o * nax + i2) * inner + j;
                            gp[idx] = gp[idx] + go * (xv[idx] - mean);
                        }
                    }
                }
            }
        }
        Op::MedianStack { parts, picks } => {
            let half = c::<F>(0.5);
            for (e, &(i1, i2)) in picks.iter().enumerate() {
                let gi = g[e];
                if i1 == i2 {
                    let p = parts[i1 as usize];
                    if rg(p) {
                        let n = len(p);
                        let gp = slot_mut(grads, p, n);
                        gp[e] = gp[e] + gi;
                    }
                } else {
                    for &pi in &[i1, i2] {
                        let p = parts[pi as usize];
                        if rg(p) {
                            let n = len(p);
                            let gp = slot_mut(grads, p, n);
                            gp[e] = gp[e] + gi * half;
                        }
                    }
                }
            }
        }
    }
}
