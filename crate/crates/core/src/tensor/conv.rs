//! 3D convolution and its adjoint.
//!
//! Kernels are `(C_out, C_in, kD, kH, kW)`. The transposed convolution uses the
//! same layout and is the exact adjoint of [`conv3d`] with the same kernel:
//! it maps `C_out` channels back to `C_in` channels. Stride-1 kernels run as
//! blocked direct loops; strided and transposed convolutions go through
//! im2col and GEMM.

use serde::{Deserialize, Serialize};

use super::array::Tensor;
use super::direct;
use super::scalar::{matmul, Mat, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeom {
    pub const fn unit() -> Self {
        ConvGeom {
            stride: [1; 3],
            padding: [0; 3],
        }
    }

    /// Stride 1 with "same" padding for an odd cubic kernel.
    pub const fn same(k: usize) -> Self {
        ConvGeom {
            stride: [1; 3],
            padding: [k / 2; 3],
        }
    }

    pub const fn strided(s: usize, pad: usize) -> Self {
        ConvGeom {
            stride: [s; 3],
            padding: [pad; 3],
        }
    }

    fn is_pointwise(&self, k: [usize; 3]) -> bool {
        k == [1; 3] && self.stride == [1; 3] && self.padding == [0; 3]
    }
}

/// Kernel, bias and geometry of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
    pub geom: ConvGeom,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Vec<T>, geom: ConvGeom) -> Result<Self> {
        if geom.stride.iter().any(|&s| s == 0) {
            return Err(Error::shape("conv params", "stride must be >= 1"));
        }
        if kernel.shape().iter().any(|&d| d == 0) {
            return Err(Error::shape("conv params", "kernel dims must be >= 1"));
        }
        Ok(ConvParams { kernel, bias, geom })
    }
}

/// Output spatial size of a convolution.
pub fn conv_out_dims(input: [usize; 3], k: [usize; 3], g: &ConvGeom) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        if g.stride[a] == 0 {
            return Err(Error::shape("conv3d", "stride must be >= 1"));
        }
        let padded = input[a] + 2 * g.padding[a];
        if padded < k[a] {
            return Err(Error::shape(
                "conv3d",
                format!("kernel {k:?} larger than padded input {input:?}"),
            ));
        }
        out[a] = (padded - k[a]) / g.stride[a] + 1;
    }
    Ok(out)
}

/// Output spatial size of the adjoint convolution.
pub fn conv_transpose_out_dims(input: [usize; 3], k: [usize; 3], g: &ConvGeom) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        let full = (input[a] - 1) * g.stride[a] + k[a];
        if full < 2 * g.padding[a] + 1 {
            return Err(Error::shape("conv_transpose3d", "padding removes the whole output"));
        }
        out[a] = full - 2 * g.padding[a];
    }
    Ok(out)
}

fn kernel_dims<T: Scalar>(w: &Tensor<T>) -> (usize, usize, [usize; 3]) {
    let s = w.shape();
    (s[0], s[1], [s[2], s[3], s[4]])
}

/// Output positions `o` in `[0, n_out)` whose input `o * stride + offset` lies in `[0, n_in)`.
fn valid_range(n_out: usize, stride: usize, offset: isize, n_in: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset + s - 1) / s) as usize };
    let end = n_in as isize - offset;
    let hi = if end <= 0 { 0 } else { ((end + s - 1) / s) as usize };
    (lo.min(n_out), hi.min(n_out).max(lo.min(n_out)))
}

/// Gather receptive fields of one batch item into a `(C·kD·kH·kW) x P` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    dims: [usize; 3],
    k: [usize; 3],
    g: &ConvGeom,
    out: [usize; 3],
    col: &mut [T],
) {
    let [id, ih, iw] = dims;
    let [od, oh, ow] = out;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kd in 0..k[0] {
            let (z0, z1) = valid_range(od, g.stride[0], kd as isize - g.padding[0] as isize, id);
            for kh in 0..k[1] {
                let (y0, y1) = valid_range(oh, g.stride[1], kh as isize - g.padding[1] as isize, ih);
                for kw in 0..k[2] {
                    let off = kw as isize - g.padding[2] as isize;
                    let (x0, x1) = valid_range(ow, g.stride[2], off, iw);
                    let dst = &mut col[row * p..(row + 1) * p];
                    dst.fill(T::ZERO);
                    for z in z0..z1 {
                        let zi = z * g.stride[0] + kd - g.padding[0];
                        for y in y0..y1 {
                            let yi = y * g.stride[1] + kh - g.padding[1];
                            let base = (zi * ih + yi) * iw;
                            let q = (z * oh + y) * ow;
                            let start = (x0 * g.stride[2]) as isize + off;
                            let src = &xc[base + start as usize..];
                            let d = &mut dst[q + x0..q + x1];
                            if g.stride[2] == 1 {
                                d.copy_from_slice(&src[..x1 - x0]);
                            } else {
                                for (v, s) in d.iter_mut().zip(src.iter().step_by(g.stride[2])) {
                                    *v = *s;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-add the transpose of [`im2col`].
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    col: &[T],
    channels: usize,
    dims: [usize; 3],
    k: [usize; 3],
    g: &ConvGeom,
    out: [usize; 3],
    x: &mut [T],
) {
    let [id, ih, iw] = dims;
    let [od, oh, ow] = out;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let xc = &mut x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kd in 0..k[0] {
            let (z0, z1) = valid_range(od, g.stride[0], kd as isize - g.padding[0] as isize, id);
            for kh in 0..k[1] {
                let (y0, y1) = valid_range(oh, g.stride[1], kh as isize - g.padding[1] as isize, ih);
                for kw in 0..k[2] {
                    let off = kw as isize - g.padding[2] as isize;
                    let (x0, x1) = valid_range(ow, g.stride[2], off, iw);
                    let src = &col[row * p..(row + 1) * p];
                    for z in z0..z1 {
                        let zi = z * g.stride[0] + kd - g.padding[0];
                        for y in y0..y1 {
                            let yi = y * g.stride[1] + kh - g.padding[1];
                            let base = (zi * ih + yi) * iw;
                            let q = (z * oh + y) * ow;
                            let start = (x0 * g.stride[2]) as isize + off;
                            let dst = &mut xc[base + start as usize..];
                            let s = &src[q + x0..q + x1];
                            if g.stride[2] == 1 {
                                for (d, v) in dst.iter_mut().zip(s) {
                                    *d += *v;
                                }
                            } else {
                                for (d, v) in dst.iter_mut().step_by(g.stride[2]).zip(s) {
                                    *d += *v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn check_bias<T>(bias: &[T], channels: usize, op: &'static str) -> Result<()> {
    if !bias.is_empty() && bias.len() != channels {
        return Err(Error::shape(op, format!("bias has {} entries for {channels} channels", bias.len())));
    }
    Ok(())
}

/// Cross-correlation: `y[co] = sum_ci w[co, ci] * x[ci] + b[co]`.
pub fn conv3d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &[T], g: &ConvGeom) -> Result<Tensor<T>> {
    let (c_out, c_in, k) = kernel_dims(w);
    if x.channels() != c_in {
        return Err(Error::shape(
            "conv3d",
            format!("input has {} channels, kernel expects {c_in}", x.channels()),
        ));
    }
    check_bias(bias, c_out, "conv3d")?;
    let dims = x.spatial();
    let out = conv_out_dims(dims, k, g)?;
    let p: usize = out.iter().product();
    let kk = c_in * k.iter().product::<usize>();
    let mut y = Tensor::zeros([x.batch(), c_out, out[0], out[1], out[2]]);
    let pointwise = g.is_pointwise(k);
    let direct = direct::applies(k, g);
    let mut col = if pointwise || direct { Vec::new() } else { vec![T::ZERO; kk * p] };
    for b in 0..x.batch() {
        let xb = x.item_slice(b);
        if direct {
            direct::forward(xb, w.data(), [c_in, c_out], dims, k, g.padding, y.item_slice_mut(b));
        }
        let cols = if pointwise || direct {
            xb
        } else {
            im2col(xb, c_in, dims, k, g, out, &mut col);
            &col[..]
        };
        let yb = y.item_slice_mut(b);
        if !direct {
            matmul(Mat::new(w.data(), c_out, kk), Mat::new(cols, kk, p), T::ZERO, yb);
        }
        if !bias.is_empty() {
            for (co, plane) in yb.chunks_mut(p).enumerate() {
                let bv = bias[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv3d`] with respect to input, kernel and bias.
pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeom,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let (c_out, c_in, k) = kernel_dims(w);
    let dims = x.spatial();
    let out = dy.spatial();
    let p: usize = out.iter().product();
    let kk = c_in * k.iter().product::<usize>();
    let pointwise = g.is_pointwise(k);
    let direct = direct::applies(k, g);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![T::ZERO; c_out];
    let buffered = !(pointwise || direct);
    let mut col = if buffered { vec![T::ZERO; kk * p] } else { Vec::new() };
    let mut dcol = if buffered { vec![T::ZERO; kk * p] } else { Vec::new() };
    for b in 0..x.batch() {
        let dyb = dy.item_slice(b);
        for (co, plane) in dyb.chunks(p).enumerate() {
            db[co] += plane.iter().copied().sum::<T>();
        }
        let xb = x.item_slice(b);
        if direct {
            let ch = [c_in, c_out];
            direct::backward_input(dyb, w.data(), ch, dims, k, g.padding, dx.item_slice_mut(b));
            direct::backward_kernel(xb, dyb, ch, dims, k, g.padding, dw.data_mut());
        } else if pointwise {
            matmul(Mat::new(dyb, c_out, p), Mat::new(xb, kk, p).t(), T::ONE, dw.data_mut());
            matmul(Mat::new(w.data(), c_out, kk).t(), Mat::new(dyb, c_out, p), T::ONE, dx.item_slice_mut(b));
        } else {
            im2col(xb, c_in, dims, k, g, out, &mut col);
            matmul(Mat::new(dyb, c_out, p), Mat::new(&col, kk, p).t(), T::ONE, dw.data_mut());
            matmul(Mat::new(w.data(), c_out, kk).t(), Mat::new(dyb, c_out, p), T::ZERO, &mut dcol);
            col2im(&dcol, c_in, dims, k, g, out, dx.item_slice_mut(b));
        }
    }
    (dx, dw, db)
}

/// Adjoint of [`conv3d`]: input has `C_out` channels, output `C_in` channels.
pub fn conv_transpose3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &[T],
    g: &ConvGeom,
) -> Result<Tensor<T>> {
    let (c_out, c_in, k) = kernel_dims(w);
    if x.channels() != c_out {
        return Err(Error::shape(
            "conv_transpose3d",
            format!("input has {} channels, kernel expects {c_out}", x.channels()),
        ));
    }
    check_bias(bias, c_in, "conv_transpose3d")?;
    let small = x.spatial();
    let large = conv_transpose_out_dims(small, k, g)?;
    if conv_out_dims(large, k, g)? != small {
        return Err(Error::shape("conv_transpose3d", "geometry is not invertible for this input"));
    }
    let p: usize = small.iter().product();
    let kk = c_in * k.iter().product::<usize>();
    let vox: usize = large.iter().product();
    let mut y = Tensor::zeros([x.batch(), c_in, large[0], large[1], large[2]]);
    let mut col = vec![T::ZERO; kk * p];
    for b in 0..x.batch() {
        matmul(Mat::new(w.data(), c_out, kk).t(), Mat::new(x.item_slice(b), c_out, p), T::ZERO, &mut col);
        let yb = y.item_slice_mut(b);
        col2im(&col, c_in, large, k, g, small, yb);
        if !bias.is_empty() {
            for (ci, plane) in yb.chunks_mut(vox).enumerate() {
                let bv = bias[ci];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv_transpose3d`] with respect to input, kernel and bias.
pub fn conv_transpose3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeom,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let (c_out, c_in, k) = kernel_dims(w);
    let small = x.spatial();
    let large = dy.spatial();
    let p: usize = small.iter().product();
    let kk = c_in * k.iter().product::<usize>();
    let vox: usize = large.iter().product();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![T::ZERO; c_in];
    let mut col = vec![T::ZERO; kk * p];
    for b in 0..x.batch() {
        let dyb = dy.item_slice(b);
        for (ci, plane) in dyb.chunks(vox).enumerate() {
            db[ci] += plane.iter().copied().sum::<T>();
        }
        im2col(dyb, c_in, large, k, g, small, &mut col);
        matmul(Mat::new(w.data(), c_out, kk), Mat::new(&col, kk, p), T::ZERO, dx.item_slice_mut(b));
        matmul(Mat::new(x.item_slice(b), c_out, p), Mat::new(&col, kk, p).t(), T::ONE, dw.data_mut());
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop cross-correlation.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], g: &ConvGeom) -> Tensor<f64> {
        let (c_out, c_in, k) = kernel_dims(w);
        let [id, ih, iw] = x.spatial();
        let out = conv_out_dims([id, ih, iw], k, g).unwrap();
        let mut y = Tensor::zeros([x.batch(), c_out, out[0], out[1], out[2]]);
        let ws = w.shape();
        for b in 0..x.batch() {
            for co in 0..c_out {
                for z in 0..out[0] {
                    for yy in 0..out[1] {
                        for xx in 0..out[2] {
                            let mut acc = bias.get(co).copied().unwrap_or(0.0);
                            for ci in 0..c_in {
                                for kd in 0..k[0] {
                                    for kh in 0..k[1] {
                                        for kw in 0..k[2] {
                                            let zi = (z * g.stride[0] + kd) as isize - g.padding[0] as isize;
                                            let yi = (yy * g.stride[1] + kh) as isize - g.padding[1] as isize;
                                            let xi = (xx * g.stride[2] + kw) as isize - g.padding[2] as isize;
                                            if zi < 0 || yi < 0 || xi < 0 {
                                                continue;
                                            }
                                            let (zi, yi, xi) = (zi as usize, yi as usize, xi as usize);
                                            if zi >= id || yi >= ih || xi >= iw {
                                                continue;
                                            }
                                            let wv = w.data()[(((co * ws[1] + ci) * k[0] + kd) * k[1] + kh) * k[2] + kw];
                                            acc += wv * x.plane(b, ci)[(zi * ih + yi) * iw + xi];
                                        }
                                    }
                                }
                            }
                            let o = y.plane_mut(b, co);
                            o[(z * out[1] + yy) * out[2] + xx] = acc;
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (shape, kshape, g) in [
            ([2, 3, 4, 5, 6], [2, 3, 3, 3, 3], ConvGeom::same(3)),
            ([1, 2, 6, 4, 5], [4, 2, 3, 3, 3], ConvGeom::strided(2, 1)),
            ([1, 3, 3, 3, 3], [2, 3, 1, 1, 1], ConvGeom::unit()),
            ([1, 1, 4, 4, 4], [1, 1, 2, 2, 2], ConvGeom::strided(2, 0)),
        ] {
            let x = Tensor::<f64>::randn(shape, 1.0, &mut rng);
            let w = Tensor::<f64>::randn(kshape, 1.0, &mut rng);
            let bias: Vec<f64> = (0..kshape[0]).map(|i| i as f64 * 0.1).collect();
            let fast = conv3d(&x, &w, &bias, &g).unwrap();
            let slow = naive_conv(&x, &w, &bias, &g);
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn identity_pointwise_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn([1, 2, 2, 3, 2], 1.0, &mut rng);
        let mut w = Tensor::zeros([2, 2, 1, 1, 1]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let y = conv3d(&x, &w, &[0.0, 0.0], &ConvGeom::unit()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_center_sums_neighbourhood() {
        let x = Tensor::<f64>::full([1, 1, 3, 3, 3], 1.0);
        let w = Tensor::<f64>::full([1, 1, 3, 3, 3], 1.0);
        let y = conv3d(&x, &w, &[], &ConvGeom::same(3)).unwrap();
        assert_eq!(y.data()[13], 27.0);
        assert_eq!(y.data()[0], 8.0);
    }

    #[test]
    fn transpose_doubles_dims() {
        let x = Tensor::<f32>::zeros([1, 4, 2, 3, 5]);
        let w = Tensor::<f32>::zeros([4, 2, 2, 2, 2]);
        let y = conv_transpose3d(&x, &w, &[0.0; 2], &ConvGeom::strided(2, 0)).unwrap();
        assert_eq!(y.shape(), [1, 2, 4, 6, 10]);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros([1, 2, 2, 2, 2]);
        let w = Tensor::<f32>::zeros([1, 3, 1, 1, 1]);
        assert!(conv3d(&x, &w, &[], &ConvGeom::unit()).is_err());
        let w = Tensor::<f32>::zeros([1, 2, 5, 1, 1]);
        assert!(conv3d(&x, &w, &[], &ConvGeom::unit()).is_err());
        let w = Tensor::<f32>::zeros([1, 2, 1, 1, 1]);
        assert!(conv3d(&x, &w, &[0.0, 0.0], &ConvGeom::unit()).is_err());
    }
}
