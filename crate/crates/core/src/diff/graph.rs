use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

use super::conv::{self, Geom2};

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum ConvLayout {
    /// One kernel shared by every channel.
    Shared { channels: usize },
    /// Full `[cout, cin, ...]` kernel.
    Dense { cin: usize, cout: usize },
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Conv1d { x: Var, w: Var, layout: ConvLayout, n: usize, k: usize },
    Conv2d { x: Var, w: Var, layout: ConvLayout, h: usize, wd: usize, kh: usize, kw: usize },
    AddBias(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SqNorm(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize, end: usize },
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// An eagerly evaluated expression graph with reverse-mode differentiation.
///
/// Every primitive computes its value when it is added, so [`Graph::value`]
/// is the forward evaluation of the expression rooted at a node. Leaves are
/// either constants or parameters; gradients only flow into nodes that
/// (transitively) depend on a parameter.
///
/// A graph is meant to live for one solver iteration or one training
/// example and then be dropped.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push_op(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push_op(v, Op::Sub(a, b), &[a, b]))
    }

    /// Multiplies by a fixed scalar.
    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push_op(v, Op::Scale(a, s), &[a])
    }

    /// Multiplies `a` by a one-element node `s` (the only broadcast supported).
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self
            .value(s)
            .item()
            .map_err(|_| Error::shape("mul_scalar", self.shape(s), &[]))?;
        let v = self.value(a).scale(sv);
        Ok(self.push_op(v, Op::MulScalar(a, s), &[a, s]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push_op(v, Op::Mul(a, b), &[a, b]))
    }

    /// `[m, k] x [k, n] -> [m, n]` or `[m, k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 2 && (sb.len() == 1 || sb.len() == 2) && sa[1] == sb[0];
        if !ok {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        Ok(self.push_op(Tensor::from_parts(shape, out), Op::MatMul(a, b), &[a, b]))
    }

    /// Zero-padded "same" true convolution along the last axis.
    ///
    /// Accepted layouts: `x: [n]` with `w: [k]`; `x: [c, n]` with `w: [k]`
    /// (one kernel applied to every channel); `x: [cin, n]` with
    /// `w: [cout, cin, k]`. The kernel length must be odd and not exceed `n`.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (layout, n, k) = match (sx.len(), sw.len()) {
            (1, 1) => (ConvLayout::Shared { channels: 1 }, sx[0], sw[0]),
            (2, 1) => (ConvLayout::Shared { channels: sx[0] }, sx[1], sw[0]),
            (2, 3) if sw[1] == sx[0] => (ConvLayout::Dense { cin: sx[0], cout: sw[0] }, sx[1], sw[2]),
            _ => return Err(Error::shape("conv1d", &sx, &sw)),
        };
        check_kernel("conv1d", k, n, &sx, &sw)?;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let (out, shape) = match layout {
            ConvLayout::Shared { channels } => {
                let mut out = Vec::with_capacity(channels * n);
                for c in 0..channels {
                    out.extend(conv::conv1d(&xd[c * n..(c + 1) * n], 1, n, wd, 1, k));
                }
                (out, sx.clone())
            }
            ConvLayout::Dense { cin, cout } => (conv::conv1d(xd, cin, n, wd, cout, k), vec![cout, n]),
        };
        let op = Op::Conv1d { x, w, layout, n, k };
        Ok(self.push_op(Tensor::from_parts(shape, out), op, &[x, w]))
    }

    /// Two-dimensional analogue of [`Graph::conv1d`] over the last two axes.
    ///
    /// Layouts: `x: [h, w]` or `x: [c, h, w]` with a shared `[kh, kw]`
    /// kernel, or `x: [cin, h, w]` with `w: [cout, cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (layout, h, wd, kh, kw) = match (sx.len(), sw.len()) {
            (2, 2) => (ConvLayout::Shared { channels: 1 }, sx[0], sx[1], sw[0], sw[1]),
            (3, 2) => (ConvLayout::Shared { channels: sx[0] }, sx[1], sx[2], sw[0], sw[1]),
            (3, 4) if sw[1] == sx[0] => (
                ConvLayout::Dense { cin: sx[0], cout: sw[0] },
                sx[1],
                sx[2],
                sw[2],
                sw[3],
            ),
            _ => return Err(Error::shape("conv2d", &sx, &sw)),
        };
        check_kernel("conv2d", kh, h, &sx, &sw)?;
        check_kernel("conv2d", kw, wd, &sx, &sw)?;
        let xv = self.value(x).data();
        let kv = self.value(w).data();
        let (out, shape) = match layout {
            ConvLayout::Shared { channels } => {
                let geom = Geom2 { cin: 1, cout: 1, h, w: wd, kh, kw };
                let plane = h * wd;
                let mut out = Vec::with_capacity(channels * plane);
                for c in 0..channels {
                    out.extend(conv::conv2d(&xv[c * plane..(c + 1) * plane], kv, geom));
                }
                (out, sx.clone())
            }
            ConvLayout::Dense { cin, cout } => {
                let geom = Geom2 { cin, cout, h, w: wd, kh, kw };
                (conv::conv2d(xv, kv, geom), vec![cout, h, wd])
            }
        };
        let op = Op::Conv2d { x, w, layout, h, wd, kh, kw };
        Ok(self.push_op(Tensor::from_parts(shape, out), op, &[x, w]))
    }

    /// Adds a per-channel bias `b: [c]` to `x: [c, ...]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if sx.len() < 2 || sb != [sx[0]] {
            return Err(Error::shape("add_bias", &sx, &sb));
        }
        let plane = numel(&sx[1..]);
        let mut out = self.value(x).clone();
        let bv = self.value(b).data();
        for (c, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            for v in chunk {
                *v += bv[c];
            }
        }
        Ok(self.push_op(out, Op::AddBias(x, b), &[x, b]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push_op(v, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push_op(v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push_op(v, Op::Sigmoid(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push_op(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        self.push_op(v, Op::Mean(a), &[a])
    }

    /// `‖a‖²` as a scalar node.
    pub fn sq_norm(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sq_norm());
        self.push_op(v, Op::SqNorm(a), &[a])
    }

    /// Concatenates along the leading (channel) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != tail.len() + 1 || s[1..] != tail[..] {
                return Err(Error::shape("concat", self.shape(*first), s));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(self.push_op(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), parts))
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start >= end || end > s[0] {
            return Err(Error::shape("slice", &s, &[start, end]));
        }
        let inner = numel(&s[1..]);
        let data = self.value(x).data()[start * inner..end * inner].to_vec();
        let mut shape = s.clone();
        shape[0] = end - start;
        Ok(self.push_op(Tensor::from_parts(shape, data), Op::Slice { x, start, end }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push_op(v, Op::Reshape(x), &[x]))
    }

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// Nodes that `loss` does not depend on receive a zero tensor.
    pub fn grad(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let grads = self.backward(loss)?;
        Ok(wrt
            .iter()
            .map(|v| {
                grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros_like(self.value(*v)))
            })
            .collect())
    }

    fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarObjective(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(grads);
        }
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).data()[0];
                let av = self.value(*a);
                let gs: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                acc(*s, Tensor::from_parts(self.shape(*s).to_vec(), vec![gs]));
                acc(*a, g.scale(sv));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, zip(g, bv, |x, y| x * y));
                acc(*b, zip(g, av, |x, y| x * y));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = if bv.rank() == 2 { bv.shape()[1] } else { 1 };
                if self.nodes[a.0].requires_grad {
                    // dA = G Bᵀ
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        for c in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g.data()[r * n + j] * bv.data()[c * n + j];
                            }
                            da[r * k + c] = s;
                        }
                    }
                    acc(*a, Tensor::from_parts(av.shape().to_vec(), da));
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ G
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        for c in 0..k {
                            let a_rc = av.data()[r * k + c];
                            for j in 0..n {
                                db[c * n + j] += a_rc * g.data()[r * n + j];
                            }
                        }
                    }
                    acc(*b, Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::Conv1d { x, w, layout, n, k } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, k) = (*n, *k);
                match *layout {
                    ConvLayout::Shared { channels } => {
                        if self.nodes[x.0].requires_grad {
                            let mut dx = Vec::with_capacity(channels * n);
                            for c in 0..channels {
                                dx.extend(conv::conv1d_input_grad(&g.data()[c * n..(c + 1) * n], 1, n, wv.data(), 1, k));
                            }
                            acc(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                        }
                        if self.nodes[w.0].requires_grad {
                            let mut dw = vec![0.0; k];
                            for c in 0..channels {
                                let part = conv::conv1d_weight_grad(
                                    &g.data()[c * n..(c + 1) * n],
                                    &xv.data()[c * n..(c + 1) * n],
                                    1,
                                    n,
                                    1,
                                    k,
                                );
                                for (d, p) in dw.iter_mut().zip(part) {
                                    *d += p;
                                }
                            }
                            acc(*w, Tensor::from_parts(wv.shape().to_vec(), dw));
                        }
                    }
                    ConvLayout::Dense { cin, cout } => {
                        if self.nodes[x.0].requires_grad {
                            let dx = conv::conv1d_input_grad(g.data(), cin, n, wv.data(), cout, k);
                            acc(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                        }
                        if self.nodes[w.0].requires_grad {
                            let dw = conv::conv1d_weight_grad(g.data(), xv.data(), cin, n, cout, k);
                            acc(*w, Tensor::from_parts(wv.shape().to_vec(), dw));
                        }
                    }
                }
            }
            Op::Conv2d { x, w, layout, h, wd, kh, kw } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let plane = h * wd;
                match *layout {
                    ConvLayout::Shared { channels } => {
                        let geom = Geom2 { cin: 1, cout: 1, h: *h, w: *wd, kh: *kh, kw: *kw };
                        if self.nodes[x.0].requires_grad {
                            let mut dx = Vec::with_capacity(channels * plane);
                            for c in 0..channels {
                                dx.extend(conv::conv2d_input_grad(&g.data()[c * plane..(c + 1) * plane], wv.data(), geom));
                            }
                            acc(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                        }
                        if self.nodes[w.0].requires_grad {
                            let mut dw = vec![0.0; kh * kw];
                            for c in 0..channels {
                                let part = conv::conv2d_weight_grad(
                                    &g.data()[c * plane..(c + 1) * plane],
                                    &xv.data()[c * plane..(c + 1) * plane],
                                    geom,
                                );
                                for (d, p) in dw.iter_mut().zip(part) {
                                    *d += p;
                                }
                            }
                            acc(*w, Tensor::from_parts(wv.shape().to_vec(), dw));
                        }
                    }
                    ConvLayout::Dense { cin, cout } => {
                        let geom = Geom2 { cin, cout, h: *h, w: *wd, kh: *kh, kw: *kw };
                        if self.nodes[x.0].requires_grad {
                            let dx = conv::conv2d_input_grad(g.data(), wv.data(), geom);
                            acc(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                        }
                        if self.nodes[w.0].requires_grad {
                            let dw = conv::conv2d_weight_grad(g.data(), xv.data(), geom);
                            acc(*w, Tensor::from_parts(wv.shape().to_vec(), dw));
                        }
                    }
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                if self.nodes[b.0].requires_grad {
                    let c = self.shape(*b)[0];
                    let plane = g.len() / c;
                    let db = g.data().chunks(plane).map(|ch| ch.iter().sum()).collect();
                    acc(*b, Tensor::from_parts(vec![c], db));
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, zip(g, av, |gv, x| if x > 0.0 { gv } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a);
                acc(*a, zip(g, av, |gv, x| if x > 0.0 { gv } else { slope * gv }));
            }
            Op::Sigmoid(a) => {
                let out = &node.value;
                acc(*a, zip(g, out, |gv, s| gv * s * (1.0 - s)));
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                acc(*a, Tensor::full(self.shape(*a).to_vec(), gv));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let gv = g.data()[0] / n;
                acc(*a, Tensor::full(self.shape(*a).to_vec(), gv));
            }
            Op::SqNorm(a) => {
                let gv = g.data()[0];
                acc(*a, self.value(*a).scale(2.0 * gv));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let piece = g.data()[offset..offset + len].to_vec();
                    acc(*p, Tensor::from_parts(self.shape(*p).to_vec(), piece));
                    offset += len;
                }
            }
            Op::Slice { x, start, end } => {
                let xv = self.value(*x);
                let inner = xv.len() / xv.shape()[0];
                let mut dx = vec![0.0; xv.len()];
                dx[start * inner..end * inner].copy_from_slice(g.data());
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::Reshape(x) => {
                acc(*x, Tensor::from_parts(self.shape(*x).to_vec(), g.data().to_vec()));
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_kernel(op: &'static str, k: usize, n: usize, sx: &[usize], sw: &[usize]) -> Result<()> {
    if k % 2 == 0 {
        return Err(Error::invalid(format!("{op}: kernel length {k} must be odd (kernel shape {sw:?})")));
    }
    if k > n {
        return Err(Error::shape(op, sx, sw));
    }
    Ok(())
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let a_rc = a[r * k + c];
            for (o, bv) in orow.iter_mut().zip(&b[c * n..(c + 1) * n]) {
                *o += a_rc * bv;
            }
        }
    }
    out
}
