//! Batched 1D tensor kernels (layout `[batch, channel, length]`) with their
//! hand-written backward passes.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;

/// Element type of model tensors: `f32` for training and checkpoints, `f64`
/// for gradient checking.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    fn from_stored(v: f32) -> Self;
    fn to_stored(self) -> f32;
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable")
    }
}

impl Scalar for f32 {
    fn from_stored(v: f32) -> Self {
        v
    }
    fn to_stored(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn from_stored(v: f32) -> Self {
        f64::from(v)
    }
    fn to_stored(self) -> f32 {
        self as f32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub data: Vec<T>,
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(batch: usize, channels: usize, len: usize) -> Tensor<T> {
        Tensor {
            data: vec![T::zero(); batch * channels * len],
            batch,
            channels,
            len,
        }
    }

    pub fn from_vec(data: Vec<T>, batch: usize, channels: usize, len: usize) -> Tensor<T> {
        assert_eq!(data.len(), batch * channels * len, "tensor data/shape mismatch");
        Tensor {
            data,
            batch,
            channels,
            len,
        }
    }

    #[inline]
    pub fn row(&self, b: usize, c: usize) -> &[T] {
        let s = (b * self.channels + c) * self.len;
        &self.data[s..s + self.len]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let s = (b * self.channels + c) * self.len;
        &mut self.data[s..s + self.len]
    }

    /// Channels `lo..hi` as a new tensor.
    pub fn channel_slice(&self, lo: usize, hi: usize) -> Tensor<T> {
        let c = hi - lo;
        let mut out = Vec::with_capacity(self.batch * c * self.len);
        for b in 0..self.batch {
            let s = (b * self.channels + lo) * self.len;
            out.extend_from_slice(&self.data[s..s + c * self.len]);
        }
        Tensor::from_vec(out, self.batch, c, self.len)
    }

    /// Adds `src` into channels `lo..lo + src.channels`.
    pub fn add_channels(&mut self, lo: usize, src: &Tensor<T>) {
        for b in 0..self.batch {
            let s = (b * self.channels + lo) * self.len;
            let n = src.channels * self.len;
            let d = &mut self.data[s..s + n];
            let o = &src.data[b * n..(b + 1) * n];
            for (x, y) in d.iter_mut().zip(o) {
                *x += *y;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += *y;
        }
    }
}

/// Channel concatenation.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let batch = parts[0].batch;
    let len = parts[0].len;
    let channels: usize = parts.iter().map(|p| p.channels).sum();
    let mut data = Vec::with_capacity(batch * channels * len);
    for b in 0..batch {
        for p in parts {
            debug_assert!(p.batch == batch && p.len == len);
            let n = p.channels * len;
            data.extend_from_slice(&p.data[b * n..(b + 1) * n]);
        }
    }
    Tensor::from_vec(data, batch, channels, len)
}

/// Valid output range `[lo, hi)` for a tap at `shift` over a length-`len` row.
#[inline]
fn tap_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

/// "Same" convolution with odd kernel `k`; `w` is `[cout, cin, k]`.
pub fn conv1d<T: Scalar>(x: &Tensor<T>, w: &[T], bias: &[T], cout: usize, k: usize) -> Tensor<T> {
    let cin = x.channels;
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(x.batch, cout, x.len);
    for b in 0..x.batch {
        for o in 0..cout {
            let orow = out.row_mut(b, o);
            orow.fill(bias[o]);
            for c in 0..cin {
                let xr = x.row(b, c);
                for kk in 0..k {
                    let wv = w[(o * cin + c) * k + kk];
                    let shift = kk as isize - pad;
                    let (lo, hi) = tap_range(x.len, shift);
                    let src = &xr[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (y, &v) in orow[lo..hi].iter_mut().zip(src) {
                        *y += wv * v;
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv1d`]: `(dx, dw, dbias)`; `dw`/`dbias` are accumulated.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    dout: &Tensor<T>,
    k: usize,
    dw: &mut [T],
    dbias: &mut [T],
) -> Tensor<T> {
    let cin = x.channels;
    let cout = dout.channels;
    let pad = (k / 2) as isize;
    let mut dx = Tensor::zeros(x.batch, cin, x.len);
    for b in 0..x.batch {
        for o in 0..cout {
            let drow = dout.row(b, o);
            dbias[o] += drow.iter().copied().sum();
            for c in 0..cin {
                let xr = x.row(b, c);
                let dxr = dx.row_mut(b, c);
                for kk in 0..k {
                    let idx = (o * cin + c) * k + kk;
                    let wv = w[idx];
                    let shift = kk as isize - pad;
                    let (lo, hi) = tap_range(x.len, shift);
                    let s0 = (lo as isize + shift) as usize;
                    let s1 = (hi as isize + shift) as usize;
                    let mut acc = T::zero();
                    for (&g, &v) in drow[lo..hi].iter().zip(&xr[s0..s1]) {
                        acc += g * v;
                    }
                    dw[idx] += acc;
                    for (d, &g) in dxr[s0..s1].iter_mut().zip(&drow[lo..hi]) {
                        *d += wv * g;
                    }
                }
            }
        }
    }
    dx
}

/// Transposed convolution, no padding: full output length is
/// `(len - 1) * stride + k`, of which the first `out_len` samples are kept.
/// `w` is `[cin, cout, k]`.
pub fn conv_transpose1d<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    bias: &[T],
    cout: usize,
    k: usize,
    stride: usize,
    out_len: usize,
) -> Tensor<T> {
    let cin = x.channels;
    let mut out = Tensor::zeros(x.batch, cout, out_len);
    for b in 0..x.batch {
        for o in 0..cout {
            let orow = out.row_mut(b, o);
            orow.fill(bias[o]);
            for c in 0..cin {
                let xr = x.row(b, c);
                for kk in 0..k {
                    let wv = w[(c * cout + o) * k + kk];
                    for (i, &v) in xr.iter().enumerate() {
                        let t = i * stride + kk;
                        if t >= out_len {
                            break;
                        }
                        orow[t] += wv * v;
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose1d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    dout: &Tensor<T>,
    k: usize,
    stride: usize,
    dw: &mut [T],
    dbias: &mut [T],
) -> Tensor<T> {
    let cin = x.channels;
    let cout = dout.channels;
    let out_len = dout.len;
    let mut dx = Tensor::zeros(x.batch, cin, x.len);
    for b in 0..x.batch {
        for o in 0..cout {
            let drow = dout.row(b, o);
            dbias[o] += drow.iter().copied().sum();
            for c in 0..cin {
                let xr = x.row(b, c);
                let dxr = dx.row_mut(b, c);
                for kk in 0..k {
                    let idx = (c * cout + o) * k + kk;
                    let wv = w[idx];
                    let mut acc = T::zero();
                    for i in 0..x.len {
                        let t = i * stride + kk;
                        if t >= out_len {
                            break;
                        }
                        acc += xr[i] * drow[t];
                        dxr[i] += wv * drow[t];
                    }
                    dw[idx] += acc;
                }
            }
        }
    }
    dx
}

/// Cached values for the batch-norm backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

/// Batch norm with statistics over `(batch, length)` per channel:
/// `y = gamma (x - mean) / sqrt(var + eps) + beta`, biased variance.
pub fn batch_norm_train<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T], eps: T) -> (Tensor<T>, BnCache<T>) {
    let n = T::from_usize(x.batch * x.len).unwrap();
    let mut mean = vec![T::zero(); x.channels];
    let mut var = vec![T::zero(); x.channels];
    for c in 0..x.channels {
        let mut s = T::zero();
        for b in 0..x.batch {
            s += x.row(b, c).iter().copied().sum();
        }
        let m = s / n;
        let mut v = T::zero();
        for b in 0..x.batch {
            for &e in x.row(b, c) {
                v += (e - m) * (e - m);
            }
        }
        mean[c] = m;
        var[c] = v / n;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.batch, x.channels, x.len);
    let mut y = Tensor::zeros(x.batch, x.channels, x.len);
    for b in 0..x.batch {
        for c in 0..x.channels {
            let (m, is, g, bt) = (mean[c], inv_std[c], gamma[c], beta[c]);
            let xr = x.row(b, c);
            let hr = xhat.row_mut(b, c);
            for (h, &e) in hr.iter_mut().zip(xr) {
                *h = (e - m) * is;
            }
            let hr = xhat.row(b, c).to_vec();
            for (o, h) in y.row_mut(b, c).iter_mut().zip(hr) {
                *o = g * h + bt;
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

pub fn batch_norm_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Tensor<T> {
    let mut y = x.clone();
    for b in 0..x.batch {
        for c in 0..x.channels {
            let scale = gamma[c] / (var[c] + eps).sqrt();
            let shift = beta[c] - mean[c] * scale;
            for v in y.row_mut(b, c) {
                *v = *v * scale + shift;
            }
        }
    }
    y
}

pub fn batch_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor<T> {
    let n = T::from_usize(dy.batch * dy.len).unwrap();
    let mut dx = Tensor::zeros(dy.batch, dy.channels, dy.len);
    for c in 0..dy.channels {
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for b in 0..dy.batch {
            for (&g, &h) in dy.row(b, c).iter().zip(cache.xhat.row(b, c)) {
                sum_dy += g;
                sum_dy_xhat += g * h;
            }
        }
        dgamma[c] += sum_dy_xhat;
        dbeta[c] += sum_dy;
        let k = gamma[c] * cache.inv_std[c] / n;
        for b in 0..dy.batch {
            let hr = cache.xhat.row(b, c);
            let gr = dy.row(b, c);
            for ((d, &g), &h) in dx.row_mut(b, c).iter_mut().zip(gr).zip(hr) {
                *d = k * (n * g - sum_dy - h * sum_dy_xhat);
            }
        }
    }
    dx
}

pub fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the ReLU output `act` was not positive.
pub fn relu_backward_inplace<T: Scalar>(grad: &mut Tensor<T>, act: &Tensor<T>) {
    for (g, &a) in grad.data.iter_mut().zip(&act.data) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Inverted dropout; returns the multiplicative mask (0 or `1/(1-p)`).
pub fn dropout_inplace<T: Scalar, R: Rng>(x: &mut Tensor<T>, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::c(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.data.len())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    for (v, &m) in x.data.iter_mut().zip(&mask) {
        *v *= m;
    }
    mask
}

pub fn apply_mask_inplace<T: Scalar>(x: &mut Tensor<T>, mask: &[T]) {
    for (v, &m) in x.data.iter_mut().zip(mask) {
        *v *= m;
    }
}

/// Max pool, window and stride 2; returns the output and, per output sample,
/// whether the right element won (ties go left).
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<bool>) {
    let len = x.len / 2;
    let mut out = Tensor::zeros(x.batch, x.channels, len);
    let mut arg = Vec::with_capacity(x.batch * x.channels * len);
    for b in 0..x.batch {
        for c in 0..x.channels {
            let xr = x.row(b, c);
            let orow = out.row_mut(b, c);
            for (i, o) in orow.iter_mut().enumerate() {
                let (l, r) = (xr[2 * i], xr[2 * i + 1]);
                let right = r > l;
                arg.push(right);
                *o = if right { r } else { l };
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<T: Scalar>(dout: &Tensor<T>, arg: &[bool], in_len: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(dout.batch, dout.channels, in_len);
    let mut k = 0;
    for b in 0..dout.batch {
        for c in 0..dout.channels {
            let drow = dout.row(b, c).to_vec();
            let dxr = dx.row_mut(b, c);
            for (i, g) in drow.into_iter().enumerate() {
                dxr[2 * i + usize::from(arg[k])] = g;
                k += 1;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: Vec<f64>, b: usize, c: usize, l: usize) -> Tensor<f64> {
        Tensor::from_vec(data, b, c, l)
    }

    #[test]
    fn conv_same_padding() {
        let x = t(vec![1.0, 2.0, 3.0], 1, 1, 3);
        let y = conv1d(&x, &[1.0, 10.0, 100.0], &[0.5], 1, 3);
        // y[l] = x[l-1] + 10 x[l] + 100 x[l+1]
        assert_eq!(y.data, vec![210.5, 321.5, 32.5]);
    }

    #[test]
    fn transposed_conv_length_and_crop() {
        let x = t(vec![1.0, 2.0], 1, 1, 2);
        let full = conv_transpose1d(&x, &[1.0, 10.0, 100.0], &[0.0], 1, 3, 2, 5);
        assert_eq!(full.data, vec![1.0, 10.0, 102.0, 20.0, 200.0]);
        let cropped = conv_transpose1d(&x, &[1.0, 10.0, 100.0], &[0.0], 1, 3, 2, 4);
        assert_eq!(cropped.data, full.data[..4]);
    }

    #[test]
    fn batch_norm_standardises() {
        let x = t(vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0], 2, 1, 4);
        let (y, c) = batch_norm_train(&x, &[1.0], &[0.0], 0.0);
        let m: f64 = y.data.iter().sum::<f64>() / 8.0;
        let v: f64 = y.data.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / 8.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        assert!((c.batch_mean[0] - 13.75).abs() < 1e-12);
    }

    #[test]
    fn pool_ties_go_left() {
        let x = t(vec![1.0, 1.0, 0.0, 2.0], 1, 1, 4);
        let (y, arg) = max_pool2(&x);
        assert_eq!(y.data, vec![1.0, 2.0]);
        assert_eq!(arg, vec![false, true]);
        let dx = max_pool2_backward(&t(vec![5.0, 7.0], 1, 1, 2), &arg, 4);
        assert_eq!(dx.data, vec![5.0, 0.0, 0.0, 7.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = t((0..6).map(f64::from).collect(), 2, 1, 3);
        let b = t((10..22).map(f64::from).collect(), 2, 2, 3);
        let c = concat(&[&a, &b]);
        assert_eq!(c.channels, 3);
        assert_eq!(c.channel_slice(0, 1), a);
        assert_eq!(c.channel_slice(1, 3), b);
    }
}
