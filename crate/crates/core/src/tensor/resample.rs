//! Factor-two resampling of the spatial axes.

use serde::{Deserialize, Serialize};

use super::array::{Shape, Tensor};
use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DownMode {
    /// Keep every second sample, starting at index 0.
    Nearest,
    /// Average of each 2x2x2 block.
    Mean,
    /// Maximum of each 2x2x2 block; keeps thin foreground alive in label pyramids.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpMode {
    Nearest,
    /// Half-pixel-centred linear interpolation along each axis, edges clamped.
    Trilinear,
}

/// `(outer, n, inner)` view of a spatial axis (2, 3 or 4).
fn axis_view(shape: Shape, axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn with_axis(shape: Shape, axis: usize, n: usize) -> Shape {
    let mut s = shape;
    s[axis] = n;
    s
}

/// Source taps `(i0, i1, w1)` for output sample `o` of a linear 2x upsample of length `n`.
#[inline]
fn linear_taps(o: usize, n: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, src - i0 as f64)
}

fn upsample_axis<T: Scalar>(x: &Tensor<T>, axis: usize, mode: UpMode) -> Tensor<T> {
    let (outer, n, inner) = axis_view(x.shape(), axis);
    let mut y = Tensor::zeros(with_axis(x.shape(), axis, 2 * n));
    let (src, dst) = (x.data(), y.data_mut());
    for o in 0..outer {
        for j in 0..2 * n {
            let out = &mut dst[(o * 2 * n + j) * inner..(o * 2 * n + j + 1) * inner];
            match mode {
                UpMode::Nearest => {
                    let s = &src[(o * n + j / 2) * inner..(o * n + j / 2 + 1) * inner];
                    out.copy_from_slice(s);
                }
                UpMode::Trilinear => {
                    let (i0, i1, w) = linear_taps(j, n);
                    let (w0, w1) = (T::from_f64(1.0 - w), T::from_f64(w));
                    let a = &src[(o * n + i0) * inner..(o * n + i0 + 1) * inner];
                    let b = &src[(o * n + i1) * inner..(o * n + i1 + 1) * inner];
                    for ((d, &va), &vb) in out.iter_mut().zip(a).zip(b) {
                        *d = w0 * va + w1 * vb;
                    }
                }
            }
        }
    }
    y
}

fn upsample_axis_backward<T: Scalar>(dy: &Tensor<T>, axis: usize, mode: UpMode) -> Tensor<T> {
    let (outer, n2, inner) = axis_view(dy.shape(), axis);
    let n = n2 / 2;
    let mut dx = Tensor::zeros(with_axis(dy.shape(), axis, n));
    let (src, dst) = (dy.data(), dx.data_mut());
    for o in 0..outer {
        for j in 0..n2 {
            let g = &src[(o * n2 + j) * inner..(o * n2 + j + 1) * inner];
            let (taps, w) = match mode {
                UpMode::Nearest => ((j / 2, j / 2), 0.0),
                UpMode::Trilinear => {
                    let (i0, i1, w) = linear_taps(j, n);
                    ((i0, i1), w)
                }
            };
            let (w0, w1) = (T::from_f64(1.0 - w), T::from_f64(w));
            for (k, &gv) in g.iter().enumerate() {
                dst[(o * n + taps.0) * inner + k] += w0 * gv;
                if w != 0.0 {
                    dst[(o * n + taps.1) * inner + k] += w1 * gv;
                }
            }
        }
    }
    dx
}

fn downsample_axis<T: Scalar>(x: &Tensor<T>, axis: usize, mean: bool) -> Tensor<T> {
    let (outer, n, inner) = axis_view(x.shape(), axis);
    let m = n / 2;
    let half = T::from_f64(0.5);
    let mut y = Tensor::zeros(with_axis(x.shape(), axis, m));
    let (src, dst) = (x.data(), y.data_mut());
    for o in 0..outer {
        for j in 0..m {
            let out = &mut dst[(o * m + j) * inner..(o * m + j + 1) * inner];
            let a = &src[(o * n + 2 * j) * inner..(o * n + 2 * j + 1) * inner];
            if mean {
                let b = &src[(o * n + 2 * j + 1) * inner..(o * n + 2 * j + 2) * inner];
                for ((d, &va), &vb) in out.iter_mut().zip(a).zip(b) {
                    *d = half * (va + vb);
                }
            } else {
                out.copy_from_slice(a);
            }
        }
    }
    y
}

fn downsample_axis_backward<T: Scalar>(dy: &Tensor<T>, axis: usize, mean: bool) -> Tensor<T> {
    let (outer, m, inner) = axis_view(dy.shape(), axis);
    let n = 2 * m;
    let half = T::from_f64(0.5);
    let mut dx = Tensor::zeros(with_axis(dy.shape(), axis, n));
    let (src, dst) = (dy.data(), dx.data_mut());
    for o in 0..outer {
        for j in 0..m {
            let g = &src[(o * m + j) * inner..(o * m + j + 1) * inner];
            for (k, &gv) in g.iter().enumerate() {
                if mean {
                    dst[(o * n + 2 * j) * inner + k] = half * gv;
                    dst[(o * n + 2 * j + 1) * inner + k] = half * gv;
                } else {
                    dst[(o * n + 2 * j) * inner + k] = gv;
                }
            }
        }
    }
    dx
}

fn block_max<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let [b, c, d, h, w] = x.shape();
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut y = Tensor::zeros([b, c, od, oh, ow]);
    let mut arg = Vec::with_capacity(y.len());
    let mut q = 0;
    for bi in 0..b {
        for ci in 0..c {
            let p = x.plane(bi, ci);
            for z in 0..od {
                for yy in 0..oh {
                    for xx in 0..ow {
                        let mut best = (2 * z * h + 2 * yy) * w + 2 * xx;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let idx = ((2 * z + dz) * h + 2 * yy + dy) * w + 2 * xx + dx;
                                    if p[idx] > p[best] {
                                        best = idx;
                                    }
                                }
                            }
                        }
                        y.data_mut()[q] = p[best];
                        arg.push((bi * c + ci) * d * h * w + best);
                        q += 1;
                    }
                }
            }
        }
    }
    (y, arg)
}

fn check_even(shape: Shape) -> Result<()> {
    if shape[2..].iter().any(|&d| d % 2 != 0) {
        return Err(Error::shape("downsample", format!("odd spatial dims in {shape:?}")));
    }
    Ok(())
}

/// Halve every spatial axis.
pub fn downsample<T: Scalar>(x: &Tensor<T>, mode: DownMode) -> Result<Tensor<T>> {
    check_even(x.shape())?;
    Ok(match mode {
        DownMode::Max => block_max(x).0,
        DownMode::Nearest | DownMode::Mean => {
            let mean = mode == DownMode::Mean;
            let t = downsample_axis(x, 2, mean);
            let t = downsample_axis(&t, 3, mean);
            downsample_axis(&t, 4, mean)
        }
    })
}

pub fn downsample_backward<T: Scalar>(x: &Tensor<T>, mode: DownMode, dy: &Tensor<T>) -> Tensor<T> {
    match mode {
        DownMode::Max => {
            let (_, arg) = block_max(x);
            let mut dx = Tensor::zeros(x.shape());
            for (&i, &g) in arg.iter().zip(dy.data()) {
                dx.data_mut()[i] += g;
            }
            dx
        }
        DownMode::Nearest | DownMode::Mean => {
            let mean = mode == DownMode::Mean;
            let t = downsample_axis_backward(dy, 4, mean);
            let t = downsample_axis_backward(&t, 3, mean);
            downsample_axis_backward(&t, 2, mean)
        }
    }
}

/// Double every spatial axis.
pub fn upsample<T: Scalar>(x: &Tensor<T>, mode: UpMode) -> Tensor<T> {
    let t = upsample_axis(x, 2, mode);
    let t = upsample_axis(&t, 3, mode);
    upsample_axis(&t, 4, mode)
}

pub fn upsample_backward<T: Scalar>(mode: UpMode, dy: &Tensor<T>) -> Tensor<T> {
    let t = upsample_axis_backward(dy, 4, mode);
    let t = upsample_axis_backward(&t, 3, mode);
    upsample_axis_backward(&t, 2, mode)
}
