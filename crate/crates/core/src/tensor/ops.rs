//! Pointwise, normalization and channel kernels with their backward passes.

use super::array::Tensor;
use super::scalar::Scalar;
use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// Saved statistics of an instance-norm forward pass.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    /// Normalized input before the affine transform.
    pub xhat: Tensor<T>,
    /// `1 / sqrt(var + eps)` per `(batch, channel)`.
    pub inv_std: Vec<T>,
}

/// Per-instance, per-channel normalization over the spatial axes, then
/// `gamma * xhat + beta`. Empty `gamma`/`beta` mean no affine transform.
pub fn instance_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let c = x.channels();
    if (!gamma.is_empty() && gamma.len() != c) || (!beta.is_empty() && beta.len() != c) {
        return Err(Error::shape("instance_norm", "affine parameters do not match channels"));
    }
    let n = x.voxels();
    if n == 0 {
        return Err(Error::shape("instance_norm", "no spatial extent"));
    }
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(x.batch() * c);
    for b in 0..x.batch() {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let mean = src.iter().copied().sum::<T>() * inv_n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let is = T::ONE / (var + eps).sqrt();
            inv_std.push(is);
            let (g, bt) = (
                gamma.get(ch).copied().unwrap_or(T::ONE),
                beta.get(ch).copied().unwrap_or(T::ZERO),
            );
            let xh = xhat.plane_mut(b, ch);
            for (h, &v) in xh.iter_mut().zip(src) {
                *h = (v - mean) * is;
            }
            let xh = xhat.plane(b, ch);
            for (o, &h) in y.plane_mut(b, ch).iter_mut().zip(xh) {
                *o = g * h + bt;
            }
        }
    }
    Ok((y, NormCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn instance_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    gamma: &[T],
    dy: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let [bsz, c, ..] = dy.shape();
    let n = dy.voxels();
    let nf = T::from_f64(n as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    for b in 0..bsz {
        for ch in 0..c {
            let g = gamma.get(ch).copied().unwrap_or(T::ONE);
            let xh = cache.xhat.plane(b, ch);
            let d = dy.plane(b, ch);
            let mut sum_d = T::ZERO;
            let mut sum_dx = T::ZERO;
            for (&dv, &h) in d.iter().zip(xh) {
                sum_d += dv;
                sum_dx += dv * h;
            }
            dgamma[ch] += sum_dx;
            dbeta[ch] += sum_d;
            // In terms of dxhat = g * dy.
            let is = cache.inv_std[b * c + ch];
            let scale = g * is / nf;
            for ((o, &dv), &h) in dx.plane_mut(b, ch).iter_mut().zip(d).zip(xh) {
                *o = scale * (nf * dv - sum_d - h * sum_dx);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { slope * v })
}

pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, slope: T, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::ZERO {
            *d *= slope;
        }
    }
    dx
}

/// Softmax across channels at every voxel, stabilized by the channel maximum.
pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [bsz, c, ..] = x.shape();
    let n = x.voxels();
    let mut y = Tensor::zeros(x.shape());
    for b in 0..bsz {
        let xb = x.item_slice(b);
        let yb = y.item_slice_mut(b);
        for i in 0..n {
            let mut m = xb[i];
            for ch in 1..c {
                m = m.max(xb[ch * n + i]);
            }
            let mut s = T::ZERO;
            for ch in 0..c {
                let e = (xb[ch * n + i] - m).exp();
                yb[ch * n + i] = e;
                s += e;
            }
            let inv = T::ONE / s;
            for ch in 0..c {
                yb[ch * n + i] *= inv;
            }
        }
    }
    y
}

/// Backward of softmax given its output `y`.
pub fn softmax_channels_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let [bsz, c, ..] = y.shape();
    let n = y.voxels();
    let mut dx = Tensor::zeros(y.shape());
    for b in 0..bsz {
        let yb = y.item_slice(b);
        let gb = dy.item_slice(b);
        let xb = dx.item_slice_mut(b);
        for i in 0..n {
            let mut dot = T::ZERO;
            for ch in 0..c {
                dot += yb[ch * n + i] * gb[ch * n + i];
            }
            for ch in 0..c {
                xb[ch * n + i] = yb[ch * n + i] * (gb[ch * n + i] - dot);
            }
        }
    }
    dx
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(Error::shape("concat_channels", format!("{sa:?} vs {sb:?}")));
    }
    let mut out = Tensor::zeros([sa[0], sa[1] + sb[1], sa[2], sa[3], sa[4]]);
    for bi in 0..sa[0] {
        let (ia, ib) = (a.item_slice(bi), b.item_slice(bi));
        let o = out.item_slice_mut(bi);
        o[..ia.len()].copy_from_slice(ia);
        o[ia.len()..].copy_from_slice(ib);
    }
    Ok(out)
}

/// Split a gradient of a concatenation back into its two parts.
pub fn split_channels<T: Scalar>(dy: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let s = dy.shape();
    let mut da = Tensor::zeros([s[0], first, s[2], s[3], s[4]]);
    let mut db = Tensor::zeros([s[0], s[1] - first, s[2], s[3], s[4]]);
    let cut = first * dy.voxels();
    for bi in 0..s[0] {
        let d = dy.item_slice(bi);
        da.item_slice_mut(bi).copy_from_slice(&d[..cut]);
        db.item_slice_mut(bi).copy_from_slice(&d[cut..]);
    }
    (da, db)
}

/// One channel of every batch item, kept as a single-channel tensor.
pub fn select_channel<T: Scalar>(x: &Tensor<T>, channel: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if channel >= s[1] {
        return Err(Error::shape("select_channel", format!("channel {channel} of {}", s[1])));
    }
    let mut out = Tensor::zeros([s[0], 1, s[2], s[3], s[4]]);
    for b in 0..s[0] {
        out.plane_mut(b, 0).copy_from_slice(x.plane(b, channel));
    }
    Ok(out)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("elementwise_mul", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= v;
    }
    Ok(out)
}
