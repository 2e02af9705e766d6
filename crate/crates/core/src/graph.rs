//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! execution order, so the node list is already topologically sorted and
//! [`Graph::backward`] walks it in reverse. Reusing a parameter leaf across
//! the steps of an unrolled recurrence accumulates its gradient over all
//! steps.

use crate::conv::{self, ConvSpec};
use crate::nn::Activation;
use crate::scalar::clamp_keep_nan;
use crate::{Error, Result, Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// Data that never receives a gradient.
    Constant,
    /// Differentiable input, e.g. a noise vector under a gradient check.
    Input,
    Param,
}

enum Op<T> {
    Leaf(LeafKind),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    MatMulT { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    ScaleChannels { x: Var, s: Var },
    Conv { x: Var, w: Var, spec: ConvSpec },
    ConvTranspose { x: Var, w: Var, spec: ConvSpec },
    Act { x: Var, kind: Activation },
    Clamp { x: Var, lo: T, hi: T },
    Ln(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Normalize { x: Var, xhat: Tensor<T>, inv_std: Vec<T>, mean: Vec<T>, var: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zero when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    (n, c, inner)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf_kind(&self, v: Var) -> Option<LeafKind> {
        match self.nodes[v.0].op {
            Op::Leaf(k) => Some(k),
            _ => None,
        }
    }

    /// Leaves flagged as parameters, in creation order.
    pub fn params(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .map(Var)
            .filter(|&v| self.leaf_kind(v) == Some(LeafKind::Param))
            .collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, kind: LeafKind) -> Var {
        let rg = kind != LeafKind::Constant;
        self.push(value, Op::Leaf(kind), rg)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, LeafKind::Constant)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, LeafKind::Input)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, LeafKind::Param)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_with(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Sum of many same-shaped nodes.
    pub fn add_all(&mut self, vs: &[Var]) -> Result<Var> {
        let (&first, rest) = vs
            .split_first()
            .ok_or_else(|| Error::contract("add_all of nothing"))?;
        let mut acc = first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, b) = (T::lit(scale), T::lit(shift));
        let v = self.value(x).map(|e| s * e + b);
        let rg = self.rg(&[x]);
        self.push(v, Op::Affine { x, scale: s }, rg)
    }

    /// `x · wᵀ` for `x: [n, in]`, `w: [out, in]`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::dim("matmul", xs, ws));
        }
        let (n, k, m) = (xs[0], xs[1], ws[0]);
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let xr = &xd[i * k..(i + 1) * k];
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, dst) in orow.iter_mut().enumerate() {
                let wr = &wd[o * k..(o + 1) * k];
                *dst = dot(xr, wr);
            }
        }
        let v = Tensor::new(&[n, m], out)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(v, Op::MatMulT { x, w }, rg))
    }

    /// Adds `b[c]` to every element of channel `c` (axis 1).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() < 2 || self.shape(b) != [xs[1]] {
            return Err(Error::dim("add_bias", xs, self.shape(b)));
        }
        let (n, c, inner) = channel_layout(xs);
        let bd = self.value(b).data();
        let mut v = self.value(x).clone();
        let d = v.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * inner;
                for e in &mut d[off..off + inner] {
                    *e += bd[ch];
                }
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(v, Op::AddBias { x, b }, rg))
    }

    /// Multiplies every element of channel `c` (axis 1) by `s[c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() < 2 || self.shape(s) != [xs[1]] {
            return Err(Error::dim("scale_channels", xs, self.shape(s)));
        }
        let (n, c, inner) = channel_layout(xs);
        let sd = self.value(s).data();
        let mut v = self.value(x).clone();
        let d = v.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * inner;
                for e in &mut d[off..off + inner] {
                    *e *= sd[ch];
                }
            }
        }
        let rg = self.rg(&[x, s]);
        Ok(self.push(v, Op::ScaleChannels { x, s }, rg))
    }

    pub fn conv(&mut self, x: Var, w: Var, spec: &ConvSpec) -> Result<Var> {
        let v = conv::conv(self.value(x), self.value(w), spec)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(v, Op::Conv { x, w, spec: spec.clone() }, rg))
    }

    pub fn conv_transpose(&mut self, x: Var, w: Var, spec: &ConvSpec) -> Result<Var> {
        let v = conv::conv_transpose(self.value(x), self.value(w), spec)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(v, Op::ConvTranspose { x, w, spec: spec.clone() }, rg))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::Linear {
            return x;
        }
        let v = self.value(x).map(|e| kind.apply(e));
        let rg = self.rg(&[x]);
        self.push(v, Op::Act { x, kind }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        let v = self.value(x).map(|e| clamp_keep_nan(e, lo, hi));
        let rg = self.rg(&[x]);
        self.push(v, Op::Clamp { x, lo, hi }, rg)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.ln());
        let rg = self.rg(&[x]);
        self.push(v, Op::Ln(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(&[x]);
        self.push(v, Op::Mean(x), rg)
    }

    /// Concatenates rank-2 nodes along the feature axis, in argument order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of nothing"))?;
        let n = self.shape(first)[0];
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != n {
                return Err(Error::dim("concat", self.shape(first), s));
            }
            width += s[1];
        }
        let mut out = Vec::with_capacity(n * width);
        for i in 0..n {
            for &p in parts {
                let t = self.value(p);
                let w = t.shape()[1];
                out.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
        }
        let v = Tensor::new(&[n, width], out)?;
        let rg = self.rg(parts);
        Ok(self.push(v, Op::Concat(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    /// Per-channel standardization over the batch and spatial axes with the
    /// biased batch variance. Requires at least two values per channel.
    pub fn normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::dim("normalize", &xs, &[]));
        }
        let (n, c, inner) = channel_layout(&xs);
        let count = n * inner;
        if count < 2 {
            return Err(Error::contract(format!(
                "batch normalization needs at least 2 values per channel, got shape {xs:?}"
            )));
        }
        let xd = self.value(x).data();
        let m = T::lit(count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * inner;
                mean[ch] += xd[off..off + inner].iter().copied().sum::<T>();
            }
        }
        for mu in &mut mean {
            *mu /= m;
        }
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * inner;
                var[ch] += xd[off..off + inner]
                    .iter()
                    .map(|&e| (e - mean[ch]) * (e - mean[ch]))
                    .sum::<T>();
            }
        }
        for s in &mut var {
            *s /= m;
        }
        let e = T::lit(eps);
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + e).sqrt()).collect();
        let mut xhat = self.value(x).clone();
        let d = xhat.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * inner;
                for v in &mut d[off..off + inner] {
                    *v = (*v - mean[ch]) * inv_std[ch];
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            xhat.clone(),
            Op::Normalize {
                x,
                xhat,
                inv_std,
                mean,
                var,
            },
            rg,
        ))
    }

    /// Batch mean and biased variance recorded by a [`Graph::normalize`] node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[T], &[T])> {
        match &self.nodes[v.0].op {
            Op::Normalize { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(node, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, g: Tensor<T>| -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
                slot @ None => *slot = Some(g),
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf(_) => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(*a, gy.clone())?;
                }
                if self.needs(*b) {
                    acc(*b, gy.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    acc(*a, gy.clone())?;
                }
                if self.needs(*b) {
                    acc(*b, gy.map(|e| -e))?;
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, gy.zip_with(self.value(*b), |g, y| g * y)?)?;
                }
                if self.needs(*b) {
                    acc(*b, gy.zip_with(self.value(*a), |g, x| g * x)?)?;
                }
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                acc(*x, gy.map(|e| e * s))?;
            }
            Op::MatMulT { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, k) = (xv.shape()[0], xv.shape()[1]);
                let m = wv.shape()[0];
                let gd = gy.data();
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); n * k];
                    for i in 0..n {
                        let drow = &mut dx[i * k..(i + 1) * k];
                        for o in 0..m {
                            let g = gd[i * m + o];
                            if g == T::zero() {
                                continue;
                            }
                            for (d, &wk) in drow.iter_mut().zip(&wv.data()[o * k..(o + 1) * k]) {
                                *d += g * wk;
                            }
                        }
                    }
                    acc(*x, Tensor::new(&[n, k], dx)?)?;
                }
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); m * k];
                    for i in 0..n {
                        let xr = &xv.data()[i * k..(i + 1) * k];
                        for o in 0..m {
                            let g = gd[i * m + o];
                            if g == T::zero() {
                                continue;
                            }
                            for (d, &xk) in dw[o * k..(o + 1) * k].iter_mut().zip(xr) {
                                *d += g * xk;
                            }
                        }
                    }
                    acc(*w, Tensor::new(&[m, k], dw)?)?;
                }
            }
            Op::AddBias { x, b } => {
                if self.needs(*x) {
                    acc(*x, gy.clone())?;
                }
                if self.needs(*b) {
                    let (n, c, inner) = channel_layout(gy.shape());
                    let mut db = vec![T::zero(); c];
                    for i in 0..n {
                        for (ch, d) in db.iter_mut().enumerate() {
                            let off = (i * c + ch) * inner;
                            *d += gy.data()[off..off + inner].iter().copied().sum::<T>();
                        }
                    }
                    acc(*b, Tensor::new(&[c], db)?)?;
                }
            }
            Op::ScaleChannels { x, s } => {
                let (n, c, inner) = channel_layout(gy.shape());
                let sd = self.value(*s).data();
                if self.needs(*x) {
                    let mut dx = gy.clone();
                    let d = dx.data_mut();
                    for i in 0..n {
                        for ch in 0..c {
                            let off = (i * c + ch) * inner;
                            for e in &mut d[off..off + inner] {
                                *e *= sd[ch];
                            }
                        }
                    }
                    acc(*x, dx)?;
                }
                if self.needs(*s) {
                    let xd = self.value(*x).data();
                    let mut ds = vec![T::zero(); c];
                    for i in 0..n {
                        for (ch, d) in ds.iter_mut().enumerate() {
                            let off = (i * c + ch) * inner;
                            *d += gy.data()[off..off + inner]
                                .iter()
                                .zip(&xd[off..off + inner])
                                .map(|(&g, &xv)| g * xv)
                                .sum::<T>();
                        }
                    }
                    acc(*s, Tensor::new(&[c], ds)?)?;
                }
            }
            Op::Conv { x, w, spec } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    let spatial = &xv.shape()[xv.rank() - spec.spatial_rank()..];
                    acc(*x, conv::conv_transpose_to(gy, wv, spec, spatial)?)?;
                }
                if self.needs(*w) {
                    acc(*w, conv::conv_kernel_grad(xv, gy, wv.shape(), spec)?)?;
                }
            }
            Op::ConvTranspose { x, w, spec } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    acc(*x, conv::conv(gy, wv, spec)?)?;
                }
                if self.needs(*w) {
                    acc(*w, conv::conv_kernel_grad(gy, xv, wv.shape(), spec)?)?;
                }
            }
            Op::Act { x, kind } => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let mut dx = gy.clone();
                for ((d, &xi), &yi) in dx.data_mut().iter_mut().zip(xv).zip(yv) {
                    *d *= kind.derivative(xi, yi);
                }
                acc(*x, dx)?;
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let dx = gy.zip_with(xv, |g, e| if e < *lo || e > *hi { T::zero() } else { g })?;
                acc(*x, dx)?;
            }
            Op::Ln(x) => {
                acc(*x, gy.zip_with(self.value(*x), |g, e| g / e)?)?;
            }
            Op::Sum(x) => {
                let g = gy.data()[0];
                acc(*x, Tensor::full(self.shape(*x), g))?;
            }
            Op::Mean(x) => {
                let n = T::lit(self.value(*x).len() as f64);
                let g = gy.data()[0] / n;
                acc(*x, Tensor::full(self.shape(*x), g))?;
            }
            Op::Concat(parts) => {
                let n = gy.shape()[0];
                let width = gy.shape()[1];
                let mut col = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(n * w);
                        for i in 0..n {
                            d.extend_from_slice(&gy.data()[i * width + col..i * width + col + w]);
                        }
                        acc(p, Tensor::new(&[n, w], d)?)?;
                    }
                    col += w;
                }
            }
            Op::Reshape(x) => {
                acc(*x, gy.reshape(self.shape(*x))?)?;
            }
            Op::Normalize { x, xhat, inv_std, .. } => {
                let (n, c, inner) = channel_layout(gy.shape());
                let m = T::lit((n * inner) as f64);
                let gd = gy.data();
                let hd = xhat.data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gh = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let off = (i * c + ch) * inner;
                        for j in off..off + inner {
                            sum_g[ch] += gd[j];
                            sum_gh[ch] += gd[j] * hd[j];
                        }
                    }
                }
                let mut dx = vec![T::zero(); gd.len()];
                for i in 0..n {
                    for ch in 0..c {
                        let off = (i * c + ch) * inner;
                        let k = inv_std[ch] / m;
                        for j in off..off + inner {
                            dx[j] = k * (m * gd[j] - sum_g[ch] - hd[j] * sum_gh[ch]);
                        }
                    }
                }
                acc(*x, Tensor::new(gy.shape(), dx)?)?;
            }
        }
        Ok(())
    }
}


/// Dot product with eight independent partial sums, so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
