//! Reverse-mode tape.
//!
//! A [`Graph`] records every op applied during one forward pass. Leaves borrow
//! parameter tensors (no copies); [`Graph::backward`] walks the tape in reverse
//! and returns the gradient of a scalar with respect to every node that
//! requires one.

use std::borrow::Cow;

use crate::conv::{self, ConvGeometry, Padding};
use crate::real::{gemm, MatMut, MatRef};
use crate::{Real, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Dense { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, k: Var, b: Option<Var>, geom: ConvGeometry },
    ConvTranspose { x: Var, k: Var, b: Option<Var>, geom: ConvGeometry },
    Concat { a: Var, b: Var },
    Crop { x: Var, top: usize, left: usize },
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    ScaledSigmoid { x: Var, lo: T, hi: T },
    AdaptiveAvgPool(Var),
    Reshape(Var),
    MatMulNT { a: Var, b: Var },
    AddScalar { x: Var, s: Var },
    Mse { pred: Var, target: Var },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
    check_finite: bool,
}

impl<'a, T: Real> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn dims4<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4], TensorError> {
    t.expect_rank(op, 4)?;
    let s = t.shape();
    Ok([s[0], s[1], s[2], s[3]])
}

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, expected: expected.to_vec(), got: got.to_vec() }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), check_finite: cfg!(debug_assertions) }
    }

    /// Enables or disables the per-op non-finite check.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input owned by the graph.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(t), false)
    }

    /// Constant input borrowed from the caller.
    pub fn constant_ref(&mut self, t: &'a Tensor<T>) -> Var {
        self.push_leaf(Cow::Borrowed(t), false)
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.push_leaf(Cow::Borrowed(t), true)
    }

    /// Differentiable leaf owned by the graph.
    pub fn param_owned(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(t), true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var, TensorError> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `y = x W + b` for `x: [batch, in]`, `W: [in, out]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (xv, wv) = (self.value(x), self.value(w));
        xv.expect_rank("dense", 2)?;
        wv.expect_rank("dense", 2)?;
        let (batch, fin) = (xv.shape()[0], xv.shape()[1]);
        let fout = wv.shape()[1];
        if wv.shape()[0] != fin {
            return Err(shape_err("dense", &[fin, fout], wv.shape()));
        }
        let mut out = vec![T::zero(); batch * fout];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [fout] {
                return Err(shape_err("dense bias", &[fout], bv.shape()));
            }
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(MatRef::new(xv.data(), batch, fin), MatRef::new(wv.data(), fin, fout), T::one(), MatMut::new(&mut out, batch, fout));
        let t = Tensor::new(vec![batch, fout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("dense", t, Op::Dense { x, w, b }, &inputs)
    }

    /// Cross-correlation of `x: [batch, c_in, h, w]` with
    /// `kernel: [c_out, c_in, kh, kw]`, optional per-channel bias.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: (usize, usize), padding: Padding) -> Result<Var, TensorError> {
        let [batch, c_in, h, w] = dims4("conv2d", self.value(x))?;
        let [c_out, kc, kh, kw] = dims4("conv2d kernel", self.value(kernel))?;
        if kc != c_in {
            return Err(shape_err("conv2d", &[c_out, c_in, kh, kw], self.value(kernel).shape()));
        }
        let geom = ConvGeometry::forward("conv2d", c_in, h, w, c_out, (kh, kw), stride, padding)?;
        let (ho, wo) = (geom.ho, geom.wo);
        let mut out = vec![T::zero(); batch * c_out * ho * wo];
        let xv = self.value(x).data();
        let kv = self.value(kernel).data();
        for (i, o) in out.chunks_mut(c_out * ho * wo).enumerate() {
            conv::correlate(&xv[i * c_in * h * w..(i + 1) * c_in * h * w], kv, &geom, o);
        }
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b), c_out, ho * wo, "conv2d bias")?;
        }
        let t = Tensor::new(vec![batch, c_out, ho, wo], out)?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.push("conv2d", t, Op::Conv { x, k: kernel, b: bias, geom }, &inputs)
    }

    /// Transposed convolution of `x: [batch, c_in, h, w]` with
    /// `kernel: [c_in, c_out, kh, kw]`; `crop` removes rows/columns from the
    /// full output. With the same kernel this is the adjoint of
    /// [`Graph::conv2d`].
    pub fn conv2d_transpose(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: (usize, usize), crop: Padding) -> Result<Var, TensorError> {
        let [batch, c_in, h, w] = dims4("conv2d_transpose", self.value(x))?;
        let [kc, c_out, kh, kw] = dims4("conv2d_transpose kernel", self.value(kernel))?;
        if kc != c_in {
            return Err(shape_err("conv2d_transpose", &[c_in, c_out, kh, kw], self.value(kernel).shape()));
        }
        let ho = conv::conv_transpose_out_len(h, crop.top + crop.bottom, kh, stride.0);
        let wo = conv::conv_transpose_out_len(w, crop.left + crop.right, kw, stride.1);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(TensorError::NonPositiveOutput { op: "conv2d_transpose", input: vec![h, w], kernel: (kh, kw), stride });
        };
        // Forward correlation [c_out, ho, wo] -> [c_in, h, w] whose adjoint we apply.
        let geom = ConvGeometry::forward("conv2d_transpose", c_out, ho, wo, c_in, (kh, kw), stride, crop)?;
        if geom.ho != h || geom.wo != w {
            return Err(shape_err("conv2d_transpose", &[h, w], &[geom.ho, geom.wo]));
        }
        let mut out = vec![T::zero(); batch * c_out * ho * wo];
        let xv = self.value(x).data();
        let kv = self.value(kernel).data();
        for (i, o) in out.chunks_mut(c_out * ho * wo).enumerate() {
            conv::correlate_adjoint_input(&xv[i * c_in * h * w..(i + 1) * c_in * h * w], kv, &geom, o);
        }
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b), c_out, ho * wo, "conv2d_transpose bias")?;
        }
        let t = Tensor::new(vec![batch, c_out, ho, wo], out)?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.push("conv2d_transpose", t, Op::ConvTranspose { x, k: kernel, b: bias, geom }, &inputs)
    }

    /// Channel concatenation `[a | b]` of two `[batch, c, h, w]` tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let [na, ca, ha, wa] = dims4("concat_channels", self.value(a))?;
        let [nb, cb, hb, wb] = dims4("concat_channels", self.value(b))?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(shape_err("concat_channels", &[na, cb, ha, wa], self.value(b).shape()));
        }
        let plane = ha * wa;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(na * (ca + cb) * plane);
        for i in 0..na {
            out.extend_from_slice(&av[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&bv[i * cb * plane..(i + 1) * cb * plane]);
        }
        let t = Tensor::new(vec![na, ca + cb, ha, wa], out)?;
        self.push("concat_channels", t, Op::Concat { a, b }, &[a, b])
    }

    /// Spatial window `[top..top+h, left..left+w]` of a 4-d tensor.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var, TensorError> {
        let [n, c, hi, wi] = dims4("crop", self.value(x))?;
        if top + h > hi || left + w > wi {
            return Err(shape_err("crop", &[n, c, top + h, left + w], self.value(x).shape()));
        }
        if (top, left, h, w) == (0, 0, hi, wi) {
            return Ok(x);
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            let plane = &xv[p * hi * wi..(p + 1) * hi * wi];
            for r in top..top + h {
                out.extend_from_slice(&plane[r * wi + left..r * wi + left + w]);
            }
        }
        let t = Tensor::new(vec![n, c, h, w], out)?;
        self.push("crop", t, Op::Crop { x, top, left }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", t, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var, TensorError> {
        let t = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        self.push("leaky_relu", t, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x).map(sigmoid);
        self.push("sigmoid", t, Op::Sigmoid(x), &[x])
    }

    /// `lo + sigmoid(x) * (hi - lo)`, nudged so every value stays strictly
    /// inside `(lo, hi)` even where the sigmoid saturates in floating point.
    pub fn scaled_sigmoid(&mut self, x: Var, lo: T, hi: T) -> Result<Var, TensorError> {
        let inner_lo = next_up(lo);
        let inner_hi = next_down(hi);
        let t = self.value(x).map(|v| {
            let y = lo + sigmoid(v) * (hi - lo);
            y.max(inner_lo).min(inner_hi)
        });
        self.push("scaled_sigmoid", t, Op::ScaledSigmoid { x, lo, hi }, &[x])
    }

    /// Average pooling of a `[n, c, h, w]` tensor to `[n, c, oh, ow]` using
    /// adaptive windows `[floor(i*h/oh), ceil((i+1)*h/oh))`.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var, TensorError> {
        let [n, c, h, w] = dims4("adaptive_avg_pool2d", self.value(x))?;
        if oh == 0 || ow == 0 {
            return Err(shape_err("adaptive_avg_pool2d", &[n, c, 1, 1], &[n, c, oh, ow]));
        }
        if (oh, ow) == (h, w) {
            return Ok(x);
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let plane = &xv[p * h * w..(p + 1) * h * w];
            for i in 0..oh {
                let (r0, r1) = pool_window(i, h, oh);
                for j in 0..ow {
                    let (c0, c1) = pool_window(j, w, ow);
                    let mut s = T::zero();
                    for r in r0..r1 {
                        for q in c0..c1 {
                            s = s + plane[r * w + q];
                        }
                    }
                    out[(p * oh + i) * ow + j] = s / T::from_usize((r1 - r0) * (c1 - c0)).unwrap();
                }
            }
        }
        let t = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push("adaptive_avg_pool2d", t, Op::AdaptiveAvgPool(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// `a b^T` for `a: [m, p]`, `b: [n, p]`; the DeepONet inner product.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        av.expect_rank("matmul_nt", 2)?;
        bv.expect_rank("matmul_nt", 2)?;
        let (m, p) = (av.shape()[0], av.shape()[1]);
        let n = bv.shape()[0];
        if bv.shape()[1] != p {
            return Err(shape_err("matmul_nt", &[n, p], bv.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(MatRef::new(av.data(), m, p), MatRef::new(bv.data(), n, p).t(), T::zero(), MatMut::new(&mut out, m, n));
        let t = Tensor::new(vec![m, n], out)?;
        self.push("matmul_nt", t, Op::MatMulNT { a, b }, &[a, b])
    }

    /// Adds the single value of `s: [1]` to every element of `x`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        if self.value(s).len() != 1 {
            return Err(shape_err("add_scalar", &[1], self.value(s).shape()));
        }
        let sv = self.value(s).data()[0];
        let t = self.value(x).map(|v| v + sv);
        self.push("add_scalar", t, Op::AddScalar { x, s }, &[x, s])
    }

    /// Mean of squared differences, shape `[1]`.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() {
            return Err(shape_err("mse", pv.shape(), tv.shape()));
        }
        let n = pv.len().max(1) as f64;
        let s: f64 = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(&a, &b)| {
                let d = (a - b).to_f64_lossy();
                d * d
            })
            .sum();
        let t = Tensor::scalar(T::from_f64_lossy(s / n));
        self.push("mse", t, Op::Mse { pred, target }, &[pred, target])
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(shape_err("backward", &[1], lv.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));
        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &gy, &mut grads)?;
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<'a, T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<(), TensorError> {
        match node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(x), self.value(w));
                let (batch, fin, fout) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
                if self.requires_grad(x) {
                    let mut dx = vec![T::zero(); batch * fin];
                    gemm(MatRef::new(gy.data(), batch, fout), MatRef::new(wv.data(), fin, fout).t(), T::zero(), MatMut::new(&mut dx, batch, fin));
                    self.accumulate(grads, x, Tensor::new(vec![batch, fin], dx)?);
                }
                if self.requires_grad(w) {
                    let mut dw = vec![T::zero(); fin * fout];
                    gemm(MatRef::new(xv.data(), batch, fin).t(), MatRef::new(gy.data(), batch, fout), T::zero(), MatMut::new(&mut dw, fin, fout));
                    self.accumulate(grads, w, Tensor::new(vec![fin, fout], dw)?);
                }
                if let Some(b) = b {
                    if self.requires_grad(b) {
                        let mut db = vec![T::zero(); fout];
                        for row in gy.data().chunks(fout) {
                            for (d, &g) in db.iter_mut().zip(row) {
                                *d = *d + g;
                            }
                        }
                        self.accumulate(grads, b, Tensor::new(vec![fout], db)?);
                    }
                }
            }
            Op::Conv { x, k, b, geom } => {
                let xv = self.value(x);
                let batch = xv.shape()[0];
                let in_len = geom.c_in * geom.h * geom.w;
                let out_len = geom.c_out * geom.ho * geom.wo;
                if self.requires_grad(x) {
                    let mut dx = vec![T::zero(); batch * in_len];
                    for i in 0..batch {
                        conv::correlate_adjoint_input(&gy.data()[i * out_len..(i + 1) * out_len], self.value(k).data(), &geom, &mut dx[i * in_len..(i + 1) * in_len]);
                    }
                    self.accumulate(grads, x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if self.requires_grad(k) {
                    let mut dk = vec![T::zero(); self.value(k).len()];
                    for i in 0..batch {
                        conv::correlate_adjoint_kernel(&xv.data()[i * in_len..(i + 1) * in_len], &gy.data()[i * out_len..(i + 1) * out_len], &geom, &mut dk);
                    }
                    self.accumulate(grads, k, Tensor::new(self.value(k).shape().to_vec(), dk)?);
                }
                if let Some(b) = b {
                    if self.requires_grad(b) {
                        let db = channel_sums(gy.data(), geom.c_out, geom.ho * geom.wo);
                        self.accumulate(grads, b, Tensor::new(vec![geom.c_out], db)?);
                    }
                }
            }
            Op::ConvTranspose { x, k, b, geom } => {
                // geom describes the forward correlation output -> input.
                let xv = self.value(x);
                let batch = xv.shape()[0];
                let in_len = geom.c_out * geom.ho * geom.wo;
                let out_len = geom.c_in * geom.h * geom.w;
                if self.requires_grad(x) {
                    let mut dx = vec![T::zero(); batch * in_len];
                    for i in 0..batch {
                        conv::correlate(&gy.data()[i * out_len..(i + 1) * out_len], self.value(k).data(), &geom, &mut dx[i * in_len..(i + 1) * in_len]);
                    }
                    self.accumulate(grads, x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if self.requires_grad(k) {
                    let mut dk = vec![T::zero(); self.value(k).len()];
                    for i in 0..batch {
                        conv::correlate_adjoint_kernel(&gy.data()[i * out_len..(i + 1) * out_len], &xv.data()[i * in_len..(i + 1) * in_len], &geom, &mut dk);
                    }
                    self.accumulate(grads, k, Tensor::new(self.value(k).shape().to_vec(), dk)?);
                }
                if let Some(b) = b {
                    if self.requires_grad(b) {
                        let db = channel_sums(gy.data(), geom.c_in, geom.h * geom.w);
                        self.accumulate(grads, b, Tensor::new(vec![geom.c_in], db)?);
                    }
                }
            }
            Op::Concat { a, b } => {
                let s = gy.shape();
                let (n, plane) = (s[0], s[2] * s[3]);
                let ca = self.value(a).shape()[1];
                let cb = self.value(b).shape()[1];
                let mut da = Vec::with_capacity(n * ca * plane);
                let mut db = Vec::with_capacity(n * cb * plane);
                for item in gy.data().chunks((ca + cb) * plane) {
                    da.extend_from_slice(&item[..ca * plane]);
                    db.extend_from_slice(&item[ca * plane..]);
                }
                self.accumulate(grads, a, Tensor::new(self.value(a).shape().to_vec(), da)?);
                self.accumulate(grads, b, Tensor::new(self.value(b).shape().to_vec(), db)?);
            }
            Op::Crop { x, top, left } => {
                let xs = self.value(x).shape().to_vec();
                let (hi, wi) = (xs[2], xs[3]);
                let (h, w) = (gy.shape()[2], gy.shape()[3]);
                let mut dx = vec![T::zero(); xs.iter().product()];
                for (p, g) in gy.data().chunks(h * w).enumerate() {
                    for r in 0..h {
                        let dst = p * hi * wi + (top + r) * wi + left;
                        dx[dst..dst + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                }
                self.accumulate(grads, x, Tensor::new(xs, dx)?);
            }
            Op::Relu(x) => {
                let d = zip_map(gy, self.value(x), |g, v| if v > T::zero() { g } else { T::zero() });
                self.accumulate(grads, x, d);
            }
            Op::LeakyRelu(x, slope) => {
                let d = zip_map(gy, self.value(x), |g, v| if v > T::zero() { g } else { g * slope });
                self.accumulate(grads, x, d);
            }
            Op::Sigmoid(x) => {
                let d = zip_map(gy, &node.value, |g, s| g * s * (T::one() - s));
                self.accumulate(grads, x, d);
            }
            Op::ScaledSigmoid { x, lo, hi } => {
                let d = zip_map(gy, self.value(x), |g, v| {
                    let s = sigmoid(v);
                    g * (hi - lo) * s * (T::one() - s)
                });
                self.accumulate(grads, x, d);
            }
            Op::AdaptiveAvgPool(x) => {
                let xs = self.value(x).shape().to_vec();
                let (h, w) = (xs[2], xs[3]);
                let (oh, ow) = (gy.shape()[2], gy.shape()[3]);
                let mut dx = vec![T::zero(); xs.iter().product()];
                for (p, g) in gy.data().chunks(oh * ow).enumerate() {
                    let plane = &mut dx[p * h * w..(p + 1) * h * w];
                    for i in 0..oh {
                        let (r0, r1) = pool_window(i, h, oh);
                        for j in 0..ow {
                            let (c0, c1) = pool_window(j, w, ow);
                            let share = g[i * ow + j] / T::from_usize((r1 - r0) * (c1 - c0)).unwrap();
                            for r in r0..r1 {
                                for q in c0..c1 {
                                    plane[r * w + q] = plane[r * w + q] + share;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, x, Tensor::new(xs, dx)?);
            }
            Op::Reshape(x) => {
                let d = gy.clone().reshape(self.value(x).shape().to_vec())?;
                self.accumulate(grads, x, d);
            }
            Op::MatMulNT { a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, p, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                if self.requires_grad(a) {
                    let mut da = vec![T::zero(); m * p];
                    gemm(MatRef::new(gy.data(), m, n), MatRef::new(bv.data(), n, p), T::zero(), MatMut::new(&mut da, m, p));
                    self.accumulate(grads, a, Tensor::new(vec![m, p], da)?);
                }
                if self.requires_grad(b) {
                    let mut db = vec![T::zero(); n * p];
                    gemm(MatRef::new(gy.data(), m, n).t(), MatRef::new(av.data(), m, p), T::zero(), MatMut::new(&mut db, n, p));
                    self.accumulate(grads, b, Tensor::new(vec![n, p], db)?);
                }
            }
            Op::AddScalar { x, s } => {
                self.accumulate(grads, x, gy.clone());
                let total = gy.data().iter().fold(T::zero(), |acc, &g| acc + g);
                self.accumulate(grads, s, Tensor::scalar(total));
            }
            Op::Mse { pred, target } => {
                let (pv, tv) = (self.value(pred), self.value(target));
                let scale = gy.data()[0] * T::from_f64_lossy(2.0 / pv.len().max(1) as f64);
                let d = zip_map(pv, tv, |a, b| (a - b) * scale);
                if self.requires_grad(target) {
                    self.accumulate(grads, target, d.map(|v| -v));
                }
                self.accumulate(grads, pred, d);
            }
        }
        Ok(())
    }
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &Tensor<T>, channels: usize, plane: usize, op: &'static str) -> Result<(), TensorError> {
    if bias.shape() != [channels] {
        return Err(shape_err(op, &[channels], bias.shape()));
    }
    for item in out.chunks_mut(channels * plane) {
        for (c, p) in item.chunks_mut(plane).enumerate() {
            let bc = bias.data()[c];
            p.iter_mut().for_each(|v| *v = *v + bc);
        }
    }
    Ok(())
}

fn channel_sums<T: Real>(g: &[T], channels: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for item in g.chunks(channels * plane) {
        for (c, p) in item.chunks(plane).enumerate() {
            db[c] = p.iter().fold(db[c], |acc, &v| acc + v);
        }
    }
    db
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn pool_window(i: usize, len: usize, out: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn next_up<T: Real>(x: T) -> T {
    x.step_up()
}

fn next_down<T: Real>(x: T) -> T {
    x.step_down()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictly_inside_bounds_even_when_saturated() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(vec![4], vec![-1e4, -50.0, 50.0, 1e4]).unwrap());
        let y = g.scaled_sigmoid(x, 1490.0, 4510.0).unwrap();
        for &v in g.value(y).data() {
            assert!(v > 1490.0 && v < 4510.0, "{v}");
        }
    }

    #[test]
    fn next_up_is_adjacent_value() {
        assert_eq!(next_up(4510.0f32), f32::from_bits(4510.0f32.to_bits() + 1));
        assert_eq!(next_down(4510.0f32), f32::from_bits(4510.0f32.to_bits() - 1));
        assert_eq!(next_up(1490.0f64), f64::from_bits(1490.0f64.to_bits() + 1));
    }

    #[test]
    fn pool_windows_cover_axis() {
        assert_eq!(pool_window(0, 2, 4), (0, 1));
        assert_eq!(pool_window(3, 2, 4), (1, 2));
        assert_eq!(pool_window(1, 1000, 125), (8, 16));
    }

    #[test]
    fn crop_to_same_shape_is_identity_node() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 3, 4]));
        assert_eq!(g.crop(x, 0, 0, 3, 4).unwrap(), x);
    }
}
