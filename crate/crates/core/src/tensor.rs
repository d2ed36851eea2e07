//! Dense tensors and the layer primitives both architectures are built from.
//!
//! All layouts are row-major with the last index fastest. Convolutions are
//! valid (no padding) with stride 1; pooling is 2×2 with stride 2.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type of a tensor. Training runs in `f32`; gradient checks in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_extents(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank must be at least 1".into(),
        });
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every extent must be >= 1".into(),
        });
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_extents(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expects {n} elements, data has {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// Panics on a zero extent; shapes here come from validated configs.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        check_extents(&shape).expect("tensor extents");
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        check_extents(&shape).expect("tensor extents");
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape.clone())
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Flat offset of a multi-index. Panics if out of bounds.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * d + i;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }
}

/// Elementwise nonlinearity applied after the convolution and tree layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }

    /// Derivative at pre-activation `x`. ReLU′(0) is 0.
    #[inline]
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (T::one() - s)
            }
        }
    }

    pub fn apply_tensor<T: Real>(self, t: &Tensor<T>) -> Tensor<T> {
        t.map(|x| self.apply(x))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Invalid(format!("unknown activation `{other}`"))),
        }
    }
}

fn expect_rank<T: Real>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(op, "rank", rank, t.rank()));
    }
    Ok(())
}

fn valid_extent(op: &'static str, dim: &str, input: usize, kernel: usize) -> Result<usize> {
    if input < kernel {
        return Err(Error::shape(op, dim, kernel, input));
    }
    Ok(input - kernel + 1)
}

/// Grouped valid convolution where each input channel owns `K` filters.
///
/// `input` is `C×H×W`, `filters` is `C×K×kh×kw`, and output channel `c·K+k`
/// correlates channel `c` with filter `(c, k)`. No bias.
pub fn conv2d_grouped<T: Real>(input: &Tensor<T>, filters: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    const OP: &str = "conv2d_grouped";
    expect_rank(OP, input, 3)?;
    expect_rank(OP, filters, 4)?;
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (fc, k, kh, kw) = (filters.shape[0], filters.shape[1], filters.shape[2], filters.shape[3]);
    if groups != c {
        return Err(Error::shape(OP, "groups vs input channels", c, groups));
    }
    if fc != c {
        return Err(Error::shape(OP, "filter channel count", c, fc));
    }
    let oh = valid_extent(OP, "input height", h, kh)?;
    let ow = valid_extent(OP, "input width", w, kw)?;
    let mut out = Tensor::zeros(vec![c * k, oh, ow]);
    let x = input.data();
    let f = filters.data();
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            let ch = ci * k + ki;
            let filt = &f[ch * kh * kw..(ch + 1) * kh * kw];
            let dst = &mut out.data[ch * oh * ow..(ch + 1) * oh * ow];
            correlate_accumulate(plane, w, filt, kh, kw, dst, oh, ow);
        }
    }
    Ok(out)
}

/// `dst[i,j] += Σ_{u,v} filt[u,v] · plane[i+u, j+v]`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn correlate_accumulate<T: Real>(
    plane: &[T],
    w: usize,
    filt: &[T],
    kh: usize,
    kw: usize,
    dst: &mut [T],
    oh: usize,
    ow: usize,
) {
    for u in 0..kh {
        for v in 0..kw {
            let wt = filt[u * kw + v];
            for i in 0..oh {
                let src = &plane[(i + u) * w + v..(i + u) * w + v + ow];
                let row = &mut dst[i * ow..(i + 1) * ow];
                for (o, &s) in row.iter_mut().zip(src) {
                    *o += wt * s;
                }
            }
        }
    }
}

/// Full-depth valid convolution: `filters` is `F×C×kh×kw`, optional bias per filter.
pub fn conv2d_full<T: Real>(input: &Tensor<T>, filters: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    const OP: &str = "conv2d_full";
    expect_rank(OP, input, 3)?;
    expect_rank(OP, filters, 4)?;
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (nf, fc, kh, kw) = (filters.shape[0], filters.shape[1], filters.shape[2], filters.shape[3]);
    if fc != c {
        return Err(Error::shape(OP, "filter depth", c, fc));
    }
    if let Some(b) = bias {
        if b.len() != nf {
            return Err(Error::shape(OP, "bias length", nf, b.len()));
        }
    }
    let oh = valid_extent(OP, "input height", h, kh)?;
    let ow = valid_extent(OP, "input width", w, kw)?;
    let mut out = Tensor::zeros(vec![nf, oh, ow]);
    let x = input.data();
    let f = filters.data();
    for fi in 0..nf {
        let dst = &mut out.data[fi * oh * ow..(fi + 1) * oh * ow];
        if let Some(b) = bias {
            dst.fill(b.data[fi]);
        }
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            let off = (fi * c + ci) * kh * kw;
            correlate_accumulate(plane, w, &f[off..off + kh * kw], kh, kw, dst, oh, ow);
        }
    }
    Ok(out)
}

/// Result of 2×2 max-pooling: pooled values plus the winning window slot
/// (0..4, row-major within the window) of every pooled cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolTrace<T = f32> {
    pub output: Tensor<T>,
    pub argmax: Vec<u8>,
}

impl<T: Real> PoolTrace<T> {
    /// Input-plane coordinates `(row, col)` of the winner for pooled cell `(i, j)` of `channel`.
    #[inline]
    pub fn winner(&self, channel: usize, i: usize, j: usize) -> (usize, usize) {
        let (ph, pw) = (self.output.shape[1], self.output.shape[2]);
        let a = self.argmax[(channel * ph + i) * pw + j] as usize;
        (2 * i + a / 2, 2 * j + a % 2)
    }
}

/// Non-overlapping 2×2 max-pool. Ties go to the lowest window-local index.
pub fn maxpool2x2<T: Real>(input: &Tensor<T>) -> Result<PoolTrace<T>> {
    const OP: &str = "maxpool2x2";
    expect_rank(OP, input, 3)?;
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    if h % 2 != 0 {
        return Err(Error::shape(OP, "even height", h + 1, h));
    }
    if w % 2 != 0 {
        return Err(Error::shape(OP, "even width", w + 1, w));
    }
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![c, ph, pw]);
    let mut argmax = vec![0u8; c * ph * pw];
    let x = input.data();
    for ci in 0..c {
        for i in 0..ph {
            for j in 0..pw {
                let base = ci * h * w + 2 * i * w + 2 * j;
                let window = [x[base], x[base + 1], x[base + w], x[base + w + 1]];
                let mut best = 0;
                for s in 1..4 {
                    if window[s] > window[best] {
                        best = s;
                    }
                }
                let o = (ci * ph + i) * pw + j;
                out.data[o] = window[best];
                argmax[o] = best as u8;
            }
        }
    }
    Ok(PoolTrace { output: out, argmax })
}

/// Routes pooled-cell sensitivities back to each window's argmax element.
pub fn maxpool2x2_backward<T: Real>(trace: &PoolTrace<T>, d_out: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "maxpool2x2_backward";
    if d_out.shape() != trace.output.shape() {
        return Err(Error::shape(OP, "gradient size", trace.output.len(), d_out.len()));
    }
    let (c, ph, pw) = (trace.output.shape[0], trace.output.shape[1], trace.output.shape[2]);
    let (h, w) = (2 * ph, 2 * pw);
    let mut d_in = Tensor::zeros(vec![c, h, w]);
    for ci in 0..c {
        for i in 0..ph {
            for j in 0..pw {
                let (r, col) = trace.winner(ci, i, j);
                d_in.data[(ci * h + r) * w + col] = d_out.data[(ci * ph + i) * pw + j];
            }
        }
    }
    Ok(d_in)
}

/// `out[j] = Σ_i input[i]·weights[i,j] (+ bias[j])` with `weights` shaped `n×m`.
pub fn dense_forward<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    const OP: &str = "dense_forward";
    expect_rank(OP, weights, 2)?;
    let (n, m) = (weights.shape[0], weights.shape[1]);
    if input.len() != n {
        return Err(Error::shape(OP, "input length", n, input.len()));
    }
    let mut out = match bias {
        Some(b) if b.len() != m => return Err(Error::shape(OP, "bias length", m, b.len())),
        Some(b) => Tensor::new(vec![m], b.data.clone())?,
        None => Tensor::zeros(vec![m]),
    };
    let wd = weights.data();
    for (i, &x) in input.data().iter().enumerate() {
        let row = &wd[i * m..(i + 1) * m];
        for (o, &wij) in out.data.iter_mut().zip(row) {
            *o += x * wij;
        }
    }
    Ok(out)
}

/// Gradients of a dense layer: `(d_input, d_weights, d_bias)`.
///
/// `d_input[i] = Σ_j weights[i,j]·d_out[j]`, summed in increasing `j`.
pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    d_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    const OP: &str = "dense_backward";
    expect_rank(OP, weights, 2)?;
    let (n, m) = (weights.shape[0], weights.shape[1]);
    if input.len() != n {
        return Err(Error::shape(OP, "input length", n, input.len()));
    }
    if d_out.len() != m {
        return Err(Error::shape(OP, "output gradient length", m, d_out.len()));
    }
    let mut d_in = Tensor::zeros(vec![n]);
    let mut d_w = Tensor::zeros(vec![n, m]);
    let d = d_out.data();
    for i in 0..n {
        let row = &weights.data[i * m..(i + 1) * m];
        d_in.data[i] = row_dot(row, d);
        let x = input.data[i];
        for (g, &dj) in d_w.data[i * m..(i + 1) * m].iter_mut().zip(d) {
            *g = x * dj;
        }
    }
    Ok((d_in, d_w, d_out.clone()))
}

/// `Σ_j a[j]·b[j]` accumulated left to right from zero.
#[inline]
pub fn row_dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Filter gradient of [`conv2d_grouped`].
///
/// Each entry `g[c,k,u,v] = Σ_{i,j} input[c,i+u,j+v]·d_out[c·K+k,i,j]` is
/// accumulated in `f64`, visiting `(i, j)` in row-major order.
pub fn conv2d_grouped_backward_filters<T: Real>(
    input: &Tensor<T>,
    d_out: &Tensor<T>,
    k: usize,
    kh: usize,
    kw: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d_grouped_backward_filters";
    expect_rank(OP, input, 3)?;
    expect_rank(OP, d_out, 3)?;
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (oh, ow) = (h + 1 - kh, w + 1 - kw);
    if d_out.shape() != [c * k, oh, ow] {
        return Err(Error::shape(OP, "output gradient size", c * k * oh * ow, d_out.len()));
    }
    let mut g = Tensor::zeros(vec![c, k, kh, kw]);
    let mut acc = vec![0f64; kh * kw];
    for ci in 0..c {
        let plane = &input.data[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            let ch = ci * k + ki;
            acc.fill(0.0);
            let d = &d_out.data[ch * oh * ow..(ch + 1) * oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    let dv = d[i * ow + j].f64();
                    for u in 0..kh {
                        let src = &plane[(i + u) * w + j..(i + u) * w + j + kw];
                        for (v, &x) in src.iter().enumerate() {
                            acc[u * kw + v] += x.f64() * dv;
                        }
                    }
                }
            }
            for (dst, &a) in g.data[ch * kh * kw..(ch + 1) * kh * kw].iter_mut().zip(&acc) {
                *dst = T::of(a);
            }
        }
    }
    Ok(g)
}

/// Gradients of [`conv2d_full`]: `(d_input, d_filters, d_bias)`.
pub fn conv2d_full_backward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    d_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    const OP: &str = "conv2d_full_backward";
    expect_rank(OP, input, 3)?;
    expect_rank(OP, filters, 4)?;
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (nf, kh, kw) = (filters.shape[0], filters.shape[2], filters.shape[3]);
    let (oh, ow) = (h + 1 - kh, w + 1 - kw);
    if d_out.shape() != [nf, oh, ow] {
        return Err(Error::shape(OP, "output gradient size", nf * oh * ow, d_out.len()));
    }
    let mut d_in = Tensor::zeros(vec![c, h, w]);
    let mut d_f = Tensor::zeros(filters.shape().to_vec());
    let mut d_b = Tensor::zeros(vec![nf]);
    let mut acc = vec![0f64; kh * kw];
    for fi in 0..nf {
        let d = &d_out.data[fi * oh * ow..(fi + 1) * oh * ow];
        d_b.data[fi] = T::of(d.iter().map(|x| x.f64()).sum());
        for ci in 0..c {
            let plane = &input.data[ci * h * w..(ci + 1) * h * w];
            let off = (fi * c + ci) * kh * kw;
            let filt = &filters.data[off..off + kh * kw];
            acc.fill(0.0);
            for i in 0..oh {
                for j in 0..ow {
                    let dv = d[i * ow + j];
                    if dv == T::zero() {
                        continue;
                    }
                    for u in 0..kh {
                        for v in 0..kw {
                            let p = (i + u) * w + j + v;
                            acc[u * kw + v] += plane[p].f64() * dv.f64();
                            d_in.data[ci * h * w + p] += filt[u * kw + v] * dv;
                        }
                    }
                }
            }
            for (dst, &a) in d_f.data[off..off + kh * kw].iter_mut().zip(&acc) {
                *dst = T::of(a);
            }
        }
    }
    Ok((d_in, d_f, d_b))
}

/// Softmax cross-entropy: returns `(−log softmax(logits)[label], softmax − onehot)`.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    let n = logits.len();
    if label >= n {
        return Err(Error::Label(label));
    }
    let max = logits.data.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.data.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() - (logits.data[label] - max);
    let mut d = Tensor::new(vec![n], exps.iter().map(|&e| e / sum).collect())?;
    d.data[label] -= T::one();
    Ok((loss, d))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn seq(shape: &[usize], scale: f64) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |i| ((i * 37 % 101) as f64 - 50.0) * scale)
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(Vec::<usize>::new(), vec![]).is_err());
        let x = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(x.offset(&[1, 2]), 5);
    }

    #[test]
    fn grouped_conv_methods_table_shape() {
        let x = Tensor::<f32>::zeros(vec![3, 32, 32]);
        let f = Tensor::<f32>::zeros(vec![3, 6, 5, 5]);
        let y = conv2d_grouped(&x, &f, 3).unwrap();
        assert_eq!(y.shape(), &[18, 28, 28]);
    }

    #[test]
    fn grouped_conv_delta_filter_is_identity_crop() {
        let x = seq(&[2, 7, 6], 0.1);
        let mut f = Tensor::<f64>::zeros(vec![2, 3, 5, 5]);
        for c in 0..2 {
            for k in 0..3 {
                f.set(&[c, k, 0, 0], 1.0);
            }
        }
        let y = conv2d_grouped(&x, &f, 2).unwrap();
        for c in 0..2 {
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..2 {
                        assert_eq!(y.at(&[c * 3 + k, i, j]), x.at(&[c, i, j]));
                    }
                }
            }
        }
    }

    #[test]
    fn grouped_conv_constant_input_all_ones_filter() {
        let x = Tensor::<f64>::filled(vec![3, 9, 9], 0.4);
        let f = Tensor::<f64>::filled(vec![3, 2, 5, 5], 1.0);
        let y = conv2d_grouped(&x, &f, 3).unwrap();
        for &v in y.data() {
            assert!((v - 25.0 * 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn grouped_conv_shape_errors_name_the_dimension() {
        let x = Tensor::<f32>::zeros(vec![3, 32, 32]);
        let f = Tensor::<f32>::zeros(vec![2, 6, 5, 5]);
        let err = conv2d_grouped(&x, &f, 3).unwrap_err().to_string();
        assert!(err.contains("filter channel count"), "{err}");
        let err = conv2d_grouped(&x, &Tensor::zeros(vec![3, 6, 5, 5]), 1).unwrap_err().to_string();
        assert!(err.contains("groups"), "{err}");
        let small = Tensor::<f32>::zeros(vec![3, 4, 32]);
        let err = conv2d_grouped(&small, &Tensor::zeros(vec![3, 6, 5, 5]), 3).unwrap_err().to_string();
        assert!(err.contains("height"), "{err}");
    }

    #[test]
    fn full_conv_shapes_bias_and_dot_product() {
        let x = Tensor::<f32>::zeros(vec![6, 14, 14]);
        let f = Tensor::<f32>::zeros(vec![16, 6, 5, 5]);
        assert_eq!(conv2d_full(&x, &f, None).unwrap().shape(), &[16, 10, 10]);

        let b = Tensor::<f32>::filled(vec![16], 0.75);
        let y = conv2d_full(&seq(&[6, 14, 14], 0.1).cast(), &f, Some(&b)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.75));

        // one filter equal to the 1×5×5 input yields Σ input²
        let x = seq(&[1, 5, 5], 0.03);
        let f = x.clone().reshape(vec![1, 1, 5, 5]).unwrap();
        let y = conv2d_full(&x, &f, None).unwrap();
        let expected: f64 = x.data().iter().map(|v| v * v).sum();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert!((y.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn maxpool_shapes_ties_and_window() {
        let x = Tensor::<f32>::zeros(vec![18, 28, 28]);
        let p = maxpool2x2(&x).unwrap();
        assert_eq!(p.output.shape(), &[18, 14, 14]);
        assert!(p.argmax.iter().all(|&a| a == 0));

        let c = Tensor::<f64>::filled(vec![2, 4, 4], 3.5);
        let p = maxpool2x2(&c).unwrap();
        assert!(p.output.data().iter().all(|&v| v == 3.5));
        assert!(p.argmax.iter().all(|&a| a == 0));

        let w = t(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let p = maxpool2x2(&w).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);

        assert!(maxpool2x2(&Tensor::<f32>::zeros(vec![1, 3, 4])).is_err());
        assert!(maxpool2x2(&Tensor::<f32>::zeros(vec![1, 4, 5])).is_err());
    }

    #[test]
    fn maxpool_backward_sends_one_unit_per_window_to_argmax() {
        let x = seq(&[3, 6, 8], 0.01);
        let p = maxpool2x2(&x).unwrap();
        let ones = Tensor::filled(p.output.shape().to_vec(), 1.0);
        let d = maxpool2x2_backward(&p, &ones).unwrap();
        let total: f64 = d.data().iter().sum();
        assert_eq!(total, p.output.len() as f64);
        for c in 0..3 {
            for i in 0..3 {
                for j in 0..4 {
                    let (r, col) = p.winner(c, i, j);
                    assert_eq!(d.at(&[c, r, col]), 1.0);
                    assert_eq!(x.at(&[c, r, col]), p.output.at(&[c, i, j]));
                }
            }
        }
    }

    #[test]
    fn dense_forward_cases() {
        let x = Tensor::<f32>::zeros(vec![336]);
        let w = Tensor::<f32>::zeros(vec![336, 10]);
        assert_eq!(dense_forward(&x, &w, None).unwrap().shape(), &[10]);

        let x = t(&[3], vec![1.5, -2.0, 0.25]);
        let eye = Tensor::from_fn(vec![3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        assert_eq!(dense_forward(&x, &eye, None).unwrap().data(), x.data());

        let x = t(&[2], vec![1.0, 2.0]);
        let w = t(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        assert_eq!(dense_forward(&x, &w, None).unwrap().data(), &[13.0, 16.0]);
        assert!(dense_forward(&t(&[3], vec![0.0; 3]), &w, None).is_err());
    }

    #[test]
    fn softmax_xent_cases() {
        let (loss, d) = softmax_xent(&Tensor::<f64>::zeros(vec![10]), 3).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((d.data().iter().sum::<f64>()).abs() < 1e-12);

        let mut big = Tensor::<f64>::zeros(vec![10]);
        big.set(&[7], 1e4);
        let (loss, d) = softmax_xent(&big, 7).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(d.max_abs() < 1e-12);

        // independent evaluation: −log(e / (e + 9))
        let mut l = Tensor::<f64>::zeros(vec![10]);
        l.set(&[0], 1.0);
        let (loss, _) = softmax_xent(&l, 0).unwrap();
        let e = std::f64::consts::E;
        assert!((loss - (-(e / (e + 9.0)).ln())).abs() < 1e-14);
        assert!((loss - 1.4611501717344748).abs() < 1e-14);

        assert!(matches!(softmax_xent(&l, 10), Err(Error::Label(10))));
    }

    #[test]
    fn activation_derivatives() {
        assert_eq!(Activation::Relu.derivative(0.0f64), 0.0);
        assert_eq!(Activation::Relu.derivative(1e-30f64), 1.0);
        assert_eq!(Activation::Relu.apply(-2.0f64), 0.0);
        let s = Activation::Sigmoid.apply(0.3f64);
        assert!((Activation::Sigmoid.derivative(0.3f64) - s * (1.0 - s)).abs() < 1e-15);
        assert!((Activation::Sigmoid.apply(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grouped_filter_gradient_matches_direct_sum() {
        let x = seq(&[2, 8, 7], 0.02);
        let d = seq(&[6, 4, 3], 0.05);
        let g = conv2d_grouped_backward_filters(&x, &d, 3, 5, 5).unwrap();
        for c in 0..2 {
            for k in 0..3 {
                for u in 0..5 {
                    for v in 0..5 {
                        let mut s = 0.0;
                        for i in 0..4 {
                            for j in 0..3 {
                                s += x.at(&[c, i + u, j + v]) * d.at(&[c * 3 + k, i, j]);
                            }
                        }
                        assert!((g.at(&[c, k, u, v]) - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn full_conv_backward_matches_adjoint_identity() {
        // ⟨conv(x), d⟩ == ⟨x, d_in⟩ == ⟨f, d_f⟩ (bias-free, linear in each argument)
        let x = seq(&[2, 7, 7], 0.013);
        let f = seq(&[3, 2, 5, 5], 0.021);
        let d = seq(&[3, 3, 3], 0.07);
        let y = conv2d_full(&x, &f, None).unwrap();
        let (d_in, d_f, d_b) = conv2d_full_backward(&x, &f, &d).unwrap();
        let lhs: f64 = y.data().iter().zip(d.data()).map(|(a, b)| a * b).sum();
        let via_in: f64 = x.data().iter().zip(d_in.data()).map(|(a, b)| a * b).sum();
        let via_f: f64 = f.data().iter().zip(d_f.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_in).abs() < 1e-10);
        assert!((lhs - via_f).abs() < 1e-10);
        assert_eq!(d_b.len(), 3);
    }

    proptest! {
        #[test]
        fn grouped_conv_is_linear(
            xs in proptest::collection::vec(-1.0f64..1.0, 2 * 8 * 8),
            ys in proptest::collection::vec(-1.0f64..1.0, 2 * 8 * 8),
            fs in proptest::collection::vec(-1.0f64..1.0, 2 * 2 * 25),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let x = t(&[2, 8, 8], xs);
            let y = t(&[2, 8, 8], ys);
            let f = t(&[2, 2, 5, 5], fs);
            let mix = Tensor::new(vec![2, 8, 8], x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = conv2d_grouped(&mix, &f, 2).unwrap();
            let cx = conv2d_grouped(&x, &f, 2).unwrap();
            let cy = conv2d_grouped(&y, &f, 2).unwrap();
            let scale = lhs.max_abs().max(1.0);
            for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
                prop_assert!((l - (a * p + b * q)).abs() <= 1e-5 * scale);
            }
        }

        #[test]
        fn softmax_xent_gradient_sums_to_zero(
            logits in proptest::collection::vec(-30.0f32..30.0, 10),
            label in 0usize..10,
        ) {
            let (loss, d) = softmax_xent(&Tensor::new(vec![10], logits).unwrap(), label).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(d.data().iter().sum::<f32>().abs() < 1e-6);
        }

        #[test]
        fn maxpool_is_idempotent_on_constants(v in -5.0f64..5.0, c in 1usize..4, h in 1usize..5, w in 1usize..5) {
            let x = Tensor::filled(vec![c, 2 * h, 2 * w], v);
            let p = maxpool2x2(&x).unwrap();
            prop_assert!(p.output.data().iter().all(|&o| o == v));
            let q = maxpool2x2(&Tensor::filled(vec![c, 2 * h, 2 * w], v)).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
