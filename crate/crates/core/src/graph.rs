//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only tape: every op pushes one node whose inputs
//! were created earlier, so node order is already a topological order and
//! [`Graph::backward`] walks it in reverse. The graph is rebuilt for every
//! forward pass.
//!
//! `backward` does not mutate the graph; it returns a fresh [`Gradients`]
//! table. Calling it twice on the same loss yields identical gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{ClassMask, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    Transpose(Var),
    /// Row-wise affine map over the last axis.
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv3x3 { x: Var, w: Var, b: Var, stride: usize, cols: Vec<f64> },
    Relu(Var),
    Sigmoid(Var),
    Softmax { x: Var, axis: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    MulScalar { s: Var, x: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
    MeanRows(Var),
    Sum(Var),
    Dot(Var, Var),
    Index { x: Var, at: usize },
    Upsample { x: Var, factor: usize },
    CrossEntropy { logits: Var, labels: Vec<u8>, probs: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Linear { .. } => "conv1x1",
            Op::Conv3x3 { .. } => "conv3x3",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "scale",
            Op::MulScalar { .. } => "mul_scalar",
            Op::Concat { .. } => "concat",
            Op::Reshape(..) => "reshape",
            Op::MeanRows(..) => "mean_pool",
            Op::Sum(..) => "sum",
            Op::Dot(..) => "dot",
            Op::Index { .. } => "index",
            Op::Upsample { .. } => "upsample",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

/// Rounding error of `hi = x + y`.
fn two_sum_error(x: f64, y: f64, hi: f64) -> f64 {
    let yy = hi - x;
    (x - (hi - yy)) + (y - yy)
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    // low-order part of a scalar value, so that value + tail is closer to exact
    tail: f64,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar loss with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// Split a shape around `axis` into (outer, len, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softmax_slices(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_extents(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(data[at(j)]);
            }
            let mut total = 0.0;
            for j in 0..len {
                let e = libm::exp(data[at(j)] - max);
                out[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[at(j)] /= total;
            }
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    /// A scalar value as an unevaluated sum `hi + lo`. Cross-entropy, scalar
    /// addition and scaling keep `lo` so that small differences between two
    /// losses survive the final rounding.
    pub fn value_split(&self, v: Var) -> (f64, f64) {
        let n = &self.nodes[v.0];
        (n.value.item(), n.tail)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Name of the op that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// A differentiable leaf, typically a parameter.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_raw(Op::Leaf, t, true)
    }

    /// A leaf that never receives a gradient (images, fixed inputs).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(Op::Leaf, t, false)
    }

    fn push_raw(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad, tail: 0.0 });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(op, value, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, Error> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = gemm_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), t, &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, Error> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose needs rank 2, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let d = self.value(a).data();
        let t = Tensor::from_fn(&[n, m], |i| d[(i % m) * n + i / m]);
        Ok(self.push(Op::Transpose(a), t, &[a]))
    }

    /// Per-row affine map `x·w + b` over the last axis of `x`; a 1×1 convolution
    /// when `x` is an `H×W×C` feature map.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, Error> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let c = *sx.last().ok_or_else(|| shape_err("conv1x1", &sx, &sw))?;
        if sw.len() != 2 || sw[0] != c {
            return Err(shape_err("conv1x1", &sx, &sw));
        }
        let co = sw[1];
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb.len() != 1 || sb[0] != co {
                return Err(shape_err("conv1x1 bias", &sw, sb));
            }
        }
        let rows = self.value(x).numel() / c.max(1);
        let mut out = gemm_nn(self.value(x).data(), self.value(w).data(), rows, c, co);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(co) {
                for (o, &bb) in row.iter_mut().zip(bias) {
                    *o += bb;
                }
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = co;
        let t = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(Op::Linear { x, w, b }, t, &inputs))
    }

    /// 3×3 convolution with zero padding 1 over an `H×W×C` map; `w` is `3×3×C×C_out`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var, Error> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 3 || sw.len() != 4 || sw[0] != 3 || sw[1] != 3 || sw[2] != sx[2] {
            return Err(shape_err("conv3x3", sx, sw));
        }
        if sb.len() != 1 || sb[0] != sw[3] {
            return Err(shape_err("conv3x3 bias", sw, sb));
        }
        if stride == 0 {
            return Err(Error::Input("conv3x3 stride must be positive".into()));
        }
        let (h, wd, ci, co) = (sx[0], sx[1], sx[2], sw[3]);
        let ho = (h + 2 - 3) / stride + 1;
        let wo = (wd + 2 - 3) / stride + 1;
        let kdim = 9 * ci;
        let xin = self.value(x).data();
        let mut cols = vec![0.0; ho * wo * kdim];
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &mut cols[(oy * wo + ox) * kdim..(oy * wo + ox + 1) * kdim];
                for ky in 0..3 {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let src = (iy as usize * wd + ix as usize) * ci;
                        let dst = (ky * 3 + kx) * ci;
                        row[dst..dst + ci].copy_from_slice(&xin[src..src + ci]);
                    }
                }
            }
        }
        let mut out = gemm_nn(&cols, self.value(w).data(), ho * wo, kdim, co);
        let bias = self.value(b).data();
        for row in out.chunks_exact_mut(co) {
            for (o, &bb) in row.iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let t = Tensor::new(vec![ho, wo, co], out)?;
        Ok(self.push(Op::Conv3x3 { x, w, b, stride, cols }, t, &[x, w, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu(x), t, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), t, &[x])
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, Error> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::Shape(format!("softmax axis {axis} out of range for {s:?}")));
        }
        let out = softmax_slices(self.value(x).data(), &s, axis);
        let t = Tensor::new(s, out)?;
        Ok(self.push(Op::Softmax { x, axis }, t, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, Error> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let d: Vec<f64> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(sa.to_vec(), d)?;
        let tail = if t.is_scalar() {
            let (x, y, hi) = (self.value(a).item(), self.value(b).item(), t.item());
            two_sum_error(x, y, hi) + self.nodes[a.0].tail + self.nodes[b.0].tail
        } else {
            0.0
        };
        let out = self.push(Op::Add(a, b), t, &[a, b]);
        self.nodes[out.0].tail = tail;
        Ok(out)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, Error> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mul", sa, sb));
        }
        let d: Vec<f64> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(sa.to_vec(), d)?;
        Ok(self.push(Op::Mul(a, b), t, &[a, b]))
    }

    /// `scale·x + offset`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        let t = self.value(x).map(|v| scale * v + offset);
        let tail = if t.is_scalar() && offset == 0.0 {
            libm::fma(scale, self.value(x).item(), -t.item()) + scale * self.nodes[x.0].tail
        } else {
            0.0
        };
        let out = self.push(Op::Affine { x, scale }, t, &[x]);
        self.nodes[out.0].tail = tail;
        out
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    /// `s·x` for a one-element `s`.
    pub fn mul_scalar(&mut self, s: Var, x: Var) -> Result<Var, Error> {
        if !self.value(s).is_scalar() {
            return Err(Error::Shape(format!("mul_scalar needs a scalar, got {:?}", self.shape(s))));
        }
        let sv = self.value(s).item();
        let t = self.value(x).map(|v| sv * v);
        Ok(self.push(Op::MulScalar { s, x }, t, &[s, x]))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, Error> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let agree = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agree {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis];
                let d = self.value(*p).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(Op::Concat { parts: parts.to_vec(), axis }, t, parts))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, Error> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(x), t, &[x]))
    }

    /// Mean over every axis but the last: `…×C → 1×C` (global average pooling).
    pub fn mean_pool(&mut self, x: Var) -> Result<Var, Error> {
        let s = self.shape(x);
        let c = *s.last().ok_or_else(|| Error::Shape("mean_pool of rank-0 tensor".into()))?;
        let rows = self.value(x).numel() / c.max(1);
        if rows == 0 {
            return Err(Error::Shape(format!("mean_pool over empty tensor {s:?}")));
        }
        let mut out = vec![0.0; c];
        for row in self.value(x).data().chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= rows as f64;
        }
        let t = Tensor::new(vec![1, c], out)?;
        Ok(self.push(Op::MeanRows(x), t, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = crate::kernels::Compensated::default();
        self.value(x).data().iter().for_each(|&v| acc.add(v));
        let (sum, carry) = acc.parts();
        let hi = sum + carry;
        let out = self.push(Op::Sum(x), Tensor::scalar(hi), &[x]);
        self.nodes[out.0].tail = carry - (hi - sum);
        out
    }

    /// Inner product of two equally sized tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, Error> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.numel() != vb.numel() {
            return Err(shape_err("dot", va.shape(), vb.shape()));
        }
        let d = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot(a, b), Tensor::scalar(d), &[a, b]))
    }

    /// Element `at` of the flattened tensor, as a scalar.
    pub fn index(&mut self, x: Var, at: usize) -> Result<Var, Error> {
        let v = self.value(x);
        if at >= v.numel() {
            return Err(Error::Shape(format!("index {at} out of range for {:?}", v.shape())));
        }
        let t = Tensor::scalar(v.data()[at]);
        Ok(self.push(Op::Index { x, at }, t, &[x]))
    }

    /// Nearest-neighbour upsampling of an `H×W×C` map by an integer factor.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var, Error> {
        let s = self.shape(x);
        if s.len() != 3 || factor == 0 {
            return Err(Error::Shape(format!("upsample needs H×W×C and factor ≥ 1, got {s:?}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let (ho, wo) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(ho * wo * c);
        for y in 0..ho {
            for xx in 0..wo {
                let at = ((y / factor) * w + xx / factor) * c;
                out.extend_from_slice(&src[at..at + c]);
            }
        }
        let t = Tensor::new(vec![ho, wo, c], out)?;
        Ok(self.push(Op::Upsample { x, factor }, t, &[x]))
    }

    /// Mean per-pixel `−log softmax(logits)[target]` over an `H×W×K` logit map.
    pub fn cross_entropy(&mut self, logits: Var, target: &ClassMask) -> Result<Var, Error> {
        let s = self.shape(logits).to_vec();
        if s.len() != 3 || s[0] != target.height || s[1] != target.width {
            return Err(shape_err("cross_entropy", &s, &[target.height, target.width]));
        }
        let k = s[2];
        if let Some(&bad) = target.labels.iter().find(|&&c| c as usize >= k) {
            return Err(Error::Input(format!("class id {bad} out of range for {k} classes")));
        }
        let probs = softmax_slices(self.value(logits).data(), &s, 2);
        let pixels = target.labels.len();
        let mut loss = crate::kernels::Compensated::default();
        for (px, &c) in target.labels.iter().enumerate() {
            // log-softmax computed directly from the logits for accuracy near 0
            let row = &self.value(logits).data()[px * k..(px + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            loss.add(lse - row[c as usize]);
        }
        let (sum, carry) = loss.parts();
        let n = pixels as f64;
        let hi = (sum + carry) / n;
        let tail = (libm::fma(-hi, n, sum) + carry) / n;
        let out = self.push(Op::CrossEntropy { logits, labels: target.labels.clone(), probs }, Tensor::scalar(hi), &[logits]);
        self.nodes[out.0].tail = tail;
        Ok(out)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, Error> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match g {
                Some(d) if n.requires_grad => Some(Tensor::new(n.value.shape().to_vec(), d).unwrap()),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.nodes[v.0].value.numel()]);
        }
        f(slot.as_mut().unwrap());
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.nodes[a.0].requires_grad {
                    let da = gemm_nt(g, self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, |acc| add_into(acc, &da));
                }
                if self.nodes[b.0].requires_grad {
                    let db = gemm_tn(self.value(*a).data(), g, m, k, n);
                    self.accumulate(grads, *b, |acc| add_into(acc, &db));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                self.accumulate(grads, *a, |acc| {
                    for i in 0..m {
                        for j in 0..n {
                            acc[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let sw = self.shape(*w);
                let (c, co) = (sw[0], sw[1]);
                let rows = g.len() / co.max(1);
                if self.nodes[x.0].requires_grad {
                    let dx = gemm_nt(g, self.value(*w).data(), rows, co, c);
                    self.accumulate(grads, *x, |acc| add_into(acc, &dx));
                }
                if self.nodes[w.0].requires_grad {
                    let dw = gemm_tn(self.value(*x).data(), g, rows, c, co);
                    self.accumulate(grads, *w, |acc| add_into(acc, &dw));
                }
                if let Some(b) = b {
                    self.accumulate(grads, *b, |acc| column_sums_into(acc, g, co));
                }
            }
            Op::Conv3x3 { x, w, b, stride, cols } => {
                let sx = self.shape(*x);
                let (h, wd, ci) = (sx[0], sx[1], sx[2]);
                let co = self.shape(*w)[3];
                let so = node.value.shape();
                let (ho, wo) = (so[0], so[1]);
                let kdim = 9 * ci;
                if self.nodes[w.0].requires_grad {
                    let dw = gemm_tn(cols, g, ho * wo, kdim, co);
                    self.accumulate(grads, *w, |acc| add_into(acc, &dw));
                }
                self.accumulate(grads, *b, |acc| column_sums_into(acc, g, co));
                if self.nodes[x.0].requires_grad {
                    let dcols = gemm_nt(g, self.value(*w).data(), ho * wo, co, kdim);
                    let stride = *stride;
                    self.accumulate(grads, *x, |acc| {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let row = &dcols[(oy * wo + ox) * kdim..(oy * wo + ox + 1) * kdim];
                                for ky in 0..3 {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..3 {
                                        let ix = (ox * stride + kx) as isize - 1;
                                        if ix < 0 || ix >= wd as isize {
                                            continue;
                                        }
                                        let dst = (iy as usize * wd + ix as usize) * ci;
                                        let src = (ky * 3 + kx) * ci;
                                        add_into(&mut acc[dst..dst + ci], &row[src..src + ci]);
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xin = self.value(*x).data();
                self.accumulate(grads, *x, |acc| {
                    for ((a, &gi), &xi) in acc.iter_mut().zip(g).zip(xin) {
                        if xi > 0.0 {
                            *a += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => self.accumulate(grads, *x, |acc| {
                for ((a, &gi), &y) in acc.iter_mut().zip(g).zip(out) {
                    *a += gi * y * (1.0 - y);
                }
            }),
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                self.accumulate(grads, *x, |acc| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dotgy: f64 = (0..len).map(|j| g[at(j)] * out[at(j)]).sum();
                            for j in 0..len {
                                acc[at(j)] += out[at(j)] * (g[at(j)] - dotgy);
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |acc| add_into(acc, g));
                self.accumulate(grads, *b, |acc| add_into(acc, g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |acc| {
                    for ((x, &gi), &y) in acc.iter_mut().zip(g).zip(vb) {
                        *x += gi * y;
                    }
                });
                self.accumulate(grads, *b, |acc| {
                    for ((x, &gi), &y) in acc.iter_mut().zip(g).zip(va) {
                        *x += gi * y;
                    }
                });
            }
            Op::Affine { x, scale } => self.accumulate(grads, *x, |acc| {
                for (a, &gi) in acc.iter_mut().zip(g) {
                    *a += scale * gi;
                }
            }),
            Op::MulScalar { s, x } => {
                let sv = self.value(*s).item();
                let xv = self.value(*x).data();
                self.accumulate(grads, *s, |acc| {
                    acc[0] += g.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
                });
                self.accumulate(grads, *x, |acc| {
                    for (a, &gi) in acc.iter_mut().zip(g) {
                        *a += sv * gi;
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = axis_extents(shape, *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    self.accumulate(grads, *p, |acc| {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            add_into(
                                &mut acc[o * len * inner..(o + 1) * len * inner],
                                &g[src..src + len * inner],
                            );
                        }
                    });
                    offset += len;
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |acc| add_into(acc, g)),
            Op::MeanRows(x) => {
                let c = out.len();
                let rows = self.value(*x).numel() / c;
                self.accumulate(grads, *x, |acc| {
                    for row in acc.chunks_exact_mut(c) {
                        for (a, &gi) in row.iter_mut().zip(g) {
                            *a += gi / rows as f64;
                        }
                    }
                });
            }
            Op::Sum(x) => self.accumulate(grads, *x, |acc| {
                for a in acc.iter_mut() {
                    *a += g[0];
                }
            }),
            Op::Dot(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |acc| {
                    for (x, &y) in acc.iter_mut().zip(vb) {
                        *x += g[0] * y;
                    }
                });
                self.accumulate(grads, *b, |acc| {
                    for (x, &y) in acc.iter_mut().zip(va) {
                        *x += g[0] * y;
                    }
                });
            }
            Op::Index { x, at } => self.accumulate(grads, *x, |acc| acc[*at] += g[0]),
            Op::Upsample { x, factor } => {
                let s = self.shape(*x);
                let (w, c) = (s[1], s[2]);
                let so = node.value.shape();
                let (ho, wo) = (so[0], so[1]);
                self.accumulate(grads, *x, |acc| {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let dst = ((y / factor) * w + xx / factor) * c;
                            let src = (y * wo + xx) * c;
                            add_into(&mut acc[dst..dst + c], &g[src..src + c]);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = *self.shape(*logits).last().unwrap();
                let scale = g[0] / labels.len() as f64;
                self.accumulate(grads, *logits, |acc| {
                    for (px, &c) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == c as usize { 1.0 } else { 0.0 };
                            acc[px * k + j] += scale * (probs[px * k + j] - onehot);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(acc: &mut [f64], src: &[f64]) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += s;
    }
}

fn column_sums_into(acc: &mut [f64], g: &[f64], cols: usize) {
    for row in g.chunks_exact(cols) {
        add_into(acc, row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(2));
        let m = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let im = g.matmul(i, m).unwrap();
        assert_eq!(g.value(im), g.value(m));

        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let ones = g.constant(t(&[2, 1], &[1.0, 1.0]));
        let r = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(r).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Shape(msg)) => {
                assert!(msg.contains("[2, 3]"), "{msg}");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn sigmoid_reference_points() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0.0, 50.0, 1.0]));
        let y = g.sigmoid(x);
        let v = g.value(y).data();
        assert_eq!(v[0], 0.5);
        // 1 − 1e-20 rounds to 1.0 in f64, so the open bound collapses
        assert!(v[1] >= 1.0 - 1e-20 && v[1] <= 1.0);
        assert!(close(v[2], 0.7310586, 1e-7));
    }

    #[test]
    fn softmax_reference_points() {
        let mut g = Graph::new();
        let u = g.constant(t(&[3], &[2.5, 2.5, 2.5]));
        let su = g.softmax(u, 0).unwrap();
        for &v in g.value(su).data() {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
        let one = g.constant(t(&[1], &[0.0]));
        let s1 = g.softmax(one, 0).unwrap();
        assert_eq!(g.value(s1).data(), &[1.0]);
        let x = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let sx = g.softmax(x, 0).unwrap();
        let expect = [0.09003, 0.24473, 0.66524];
        for (v, e) in g.value(sx).data().iter().zip(expect) {
            assert!(close(*v, e, 1e-5));
        }
    }

    #[test]
    fn softmax_along_inner_axis() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[0.0, 10.0, 0.0, -10.0]));
        let s = g.softmax(x, 0).unwrap();
        let v = g.value(s).data();
        assert!(close(v[0] + v[2], 1.0, 1e-15));
        assert!(close(v[1] + v[3], 1.0, 1e-15));
        assert!(close(v[0], 0.5, 1e-15));
        assert!(g.softmax(x, 2).is_err());
    }

    #[test]
    fn conv1x1_identity_and_hand_case() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 2, 3], |i| i as f64));
        let w = g.constant(Tensor::eye(3));
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.conv1x1(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let x = g.constant(t(&[1, 1, 2], &[3.0, 4.0]));
        let w = g.constant(t(&[2, 1], &[1.0, 1.0]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv1x1(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[7.0]);
        assert_eq!(g.shape(y), &[1, 1, 1]);

        let bad = g.constant(Tensor::zeros(&[3, 1]));
        assert!(matches!(g.conv1x1(x, bad, None), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_reference_points() {
        let mut g = Graph::new();
        let logits = g.constant(t(&[1, 1, 2], &[1.0, 2.0]));
        let mask = ClassMask::new(1, 1, vec![1]).unwrap();
        let l = g.cross_entropy(logits, &mask).unwrap();
        assert!(close(g.value(l).item(), 0.31326, 1e-5));

        let uniform = g.constant(Tensor::zeros(&[2, 2, 4]));
        let mask = ClassMask::filled(2, 2, 3);
        let l = g.cross_entropy(uniform, &mask).unwrap();
        assert!(close(g.value(l).item(), libm::log(4.0), 1e-12));

        let confident = g.constant(Tensor::from_fn(&[2, 2, 3], |i| if i % 3 == 2 { 20.0 } else { 0.0 }));
        let l = g.cross_entropy(confident, &ClassMask::filled(2, 2, 2)).unwrap();
        assert!(g.value(l).item() < 1e-3);

        assert!(matches!(g.cross_entropy(confident, &ClassMask::filled(2, 2, 3)), Err(Error::Input(_))));
    }

    #[test]
    fn backward_trivial_identities() {
        let mut g = Graph::new();
        let p = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let p = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = g.mul(p, p).unwrap();
        let s = g.sum(sq);
        let half = g.scale(s, 0.5);
        let grads = g.backward(half).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, -2.0, 0.5]);

        // repeated sweeps see the same tape and give the same answer
        let again = g.backward(half).unwrap();
        assert_eq!(again.get(p).unwrap(), grads.get(p).unwrap());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let p = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(t(&[2], &[1.0, 2.0]));
        let p = g.param(t(&[2], &[3.0, 4.0]));
        let d = g.dot(c, p).unwrap();
        let grads = g.backward(d).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn upsample_replicates() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 1], &[1.0, 2.0]));
        let u = g.upsample(x, 2).unwrap();
        assert_eq!(g.value(u).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_along_last_axis() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 1], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert!(g.concat(&[a, b], 0).is_err());
    }
}
