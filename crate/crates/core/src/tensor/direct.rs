//! Direct stride-1 convolution on zero-padded copies.
//!
//! Each output row is built in blocks of `BLOCK` voxels held in a local
//! accumulator while looping over input channels and kernel taps, which
//! keeps the hot loop in registers for the small channel counts used here.

use super::conv::ConvGeom;
use super::scalar::Scalar;

const BLOCK: usize = 16;

pub(crate) fn applies(k: [usize; 3], g: &ConvGeom) -> bool {
    g.stride == [1, 1, 1] && k != [1, 1, 1]
}

/// Copy `channels` volumes of `dims` into a buffer padded by `pad` zeros on each side.
fn pad_channels<T: Scalar>(x: &[T], channels: usize, dims: [usize; 3], pad: [usize; 3]) -> (Vec<T>, [usize; 3]) {
    let pd = [dims[0] + 2 * pad[0], dims[1] + 2 * pad[1], dims[2] + 2 * pad[2]];
    let (vin, vp) = (dims.iter().product::<usize>(), pd.iter().product::<usize>());
    let mut out = vec![T::ZERO; channels * vp];
    for c in 0..channels {
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                let src = c * vin + (z * dims[1] + y) * dims[2];
                let dst = c * vp + ((z + pad[0]) * pd[1] + y + pad[1]) * pd[2] + pad[2];
                out[dst..dst + dims[2]].copy_from_slice(&x[src..src + dims[2]]);
            }
        }
    }
    (out, pd)
}

/// `sum_j a[j] * b[j]` with a fixed lane split, so the result is reproducible.
#[inline(always)]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::ZERO; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            lanes[j] += x[j] * y[j];
        }
    }
    let mut acc = lanes.iter().copied().sum::<T>();
    for (x, y) in ra.iter().zip(rb) {
        acc += *x * *y;
    }
    acc
}

/// `acc[j] += sum_t w_t * src[off_t + j]` over a list of `(offset, weight)` taps.
#[inline(always)]
fn block_sum<T: Scalar>(taps: &[(usize, T)], src: &[T], len: usize) -> [T; BLOCK] {
    let mut acc = [T::ZERO; BLOCK];
    if len == BLOCK {
        for &(off, wv) in taps {
            let s: &[T; BLOCK] = src[off..off + BLOCK].try_into().expect("block length");
            for j in 0..BLOCK {
                acc[j] += wv * s[j];
            }
        }
    } else {
        for &(off, wv) in taps {
            for j in 0..len {
                acc[j] += wv * src[off + j];
            }
        }
    }
    acc
}

/// Output of one batch item; `y` is overwritten. `ch = [c_in, c_out]`.
#[inline(always)]
fn forward_impl<T: Scalar>(
    x: &[T],
    w: &[T],
    ch: [usize; 2],
    dims: [usize; 3],
    k: [usize; 3],
    pad: [usize; 3],
    y: &mut [T],
) {
    let [c_in, c_out] = ch;
    let (xp, pd) = pad_channels(x, c_in, dims, pad);
    let out = [pd[0] + 1 - k[0], pd[1] + 1 - k[1], pd[2] + 1 - k[2]];
    let vp: usize = pd.iter().product();
    let p: usize = out.iter().product();
    let mut taps = Vec::with_capacity(c_in * k.iter().product::<usize>());
    for co in 0..c_out {
        // offsets relative to the padded voxel under output (0, 0, 0)
        taps.clear();
        let mut wi = co * c_in * k.iter().product::<usize>();
        for ci in 0..c_in {
            for kd in 0..k[0] {
                for kh in 0..k[1] {
                    for kw in 0..k[2] {
                        taps.push((ci * vp + (kd * pd[1] + kh) * pd[2] + kw, w[wi]));
                        wi += 1;
                    }
                }
            }
        }
        for z in 0..out[0] {
            for yy in 0..out[1] {
                let row = co * p + (z * out[1] + yy) * out[2];
                let base = (z * pd[1] + yy) * pd[2];
                let mut x0 = 0;
                while x0 < out[2] {
                    let len = BLOCK.min(out[2] - x0);
                    let acc = block_sum(&taps, &xp[base + x0..], len);
                    y[row + x0..row + x0 + len].copy_from_slice(&acc[..len]);
                    x0 += len;
                }
            }
        }
    }
}

/// Input gradient of [`forward`], added into `dx`.
#[inline(always)]
fn backward_input_impl<T: Scalar>(
    dy: &[T],
    w: &[T],
    ch: [usize; 2],
    dims: [usize; 3],
    k: [usize; 3],
    pad: [usize; 3],
    dx: &mut [T],
) {
    let [c_in, c_out] = ch;
    let out = [
        dims[0] + 2 * pad[0] + 1 - k[0],
        dims[1] + 2 * pad[1] + 1 - k[1],
        dims[2] + 2 * pad[2] + 1 - k[2],
    ];
    let full = [k[0] - 1, k[1] - 1, k[2] - 1];
    let (dyp, qd) = pad_channels(dy, c_out, out, full);
    let vq: usize = qd.iter().product();
    let vin: usize = dims.iter().product();
    let nt: usize = k.iter().product();
    // input voxel (z, y, x) reads dyp at (z + pad + full - kd, ...); the
    // shift `pad + full` is folded into the row base below
    let shift = [pad[0] + full[0], pad[1] + full[1], pad[2] + full[2]];
    let mut taps = Vec::with_capacity(c_out * nt);
    for ci in 0..c_in {
        taps.clear();
        for co in 0..c_out {
            let wk = &w[(co * c_in + ci) * nt..][..nt];
            for kd in 0..k[0] {
                for kh in 0..k[1] {
                    for kw in 0..k[2] {
                        // offset relative to dyp at (z + shift - full, ...), i.e. at least zero
                        let off = co * vq + ((full[0] - kd) * qd[1] + full[1] - kh) * qd[2] + full[2] - kw;
                        taps.push((off, wk[(kd * k[1] + kh) * k[2] + kw]));
                    }
                }
            }
        }
        for z in 0..dims[0] {
            for yy in 0..dims[1] {
                let row = ci * vin + (z * dims[1] + yy) * dims[2];
                let base = ((z + shift[0] - full[0]) * qd[1] + yy + shift[1] - full[1]) * qd[2] + shift[2] - full[2];
                let mut x0 = 0;
                while x0 < dims[2] {
                    let len = BLOCK.min(dims[2] - x0);
                    let acc = block_sum(&taps, &dyp[base + x0..], len);
                    for (d, a) in dx[row + x0..row + x0 + len].iter_mut().zip(&acc) {
                        *d += *a;
                    }
                    x0 += len;
                }
            }
        }
    }
}

/// Kernel gradient of [`forward`], added into `dw`.
#[inline(always)]
fn backward_kernel_impl<T: Scalar>(
    x: &[T],
    dy: &[T],
    ch: [usize; 2],
    dims: [usize; 3],
    k: [usize; 3],
    pad: [usize; 3],
    dw: &mut [T],
) {
    let [c_in, c_out] = ch;
    let (xp, pd) = pad_channels(x, c_in, dims, pad);
    let out = [pd[0] + 1 - k[0], pd[1] + 1 - k[1], pd[2] + 1 - k[2]];
    let vp: usize = pd.iter().product();
    let p: usize = out.iter().product();
    let nt: usize = k.iter().product();
    for co in 0..c_out {
        for ci in 0..c_in {
            let dwk = &mut dw[(co * c_in + ci) * nt..][..nt];
            for z in 0..out[0] {
                for yy in 0..out[1] {
                    let g = &dy[co * p + (z * out[1] + yy) * out[2]..][..out[2]];
                    for kd in 0..k[0] {
                        for kh in 0..k[1] {
                            let r = ci * vp + ((z + kd) * pd[1] + yy + kh) * pd[2];
                            for kw in 0..k[2] {
                                dwk[(kd * k[1] + kh) * k[2] + kw] += dot(g, &xp[r + kw..r + kw + out[2]]);
                            }
                        }
                    }
                }
            }
        }
    }
}


/// Runtime dispatch: the same loops compiled with AVX2 enabled when the CPU
/// has it. No fused multiply-add is enabled, so both paths round identically.
macro_rules! dispatch {
    ($name:ident, $impl:ident, $avx:ident, ($($arg:ident: $ty:ty),*)) => {
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2")]
        unsafe fn $avx<T: Scalar>($($arg: $ty),*) {
            $impl($($arg),*)
        }

        pub(crate) fn $name<T: Scalar>($($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the required CPU feature was detected above.
                return unsafe { $avx($($arg),*) };
            }
            $impl($($arg),*)
        }
    };
}

dispatch!(forward, forward_impl, forward_avx2,
    (x: &[T], w: &[T], ch: [usize; 2], dims: [usize; 3], k: [usize; 3], pad: [usize; 3], y: &mut [T]));
dispatch!(backward_input, backward_input_impl, backward_input_avx2,
    (dy: &[T], w: &[T], ch: [usize; 2], dims: [usize; 3], k: [usize; 3], pad: [usize; 3], dx: &mut [T]));
dispatch!(backward_kernel, backward_kernel_impl, backward_kernel_avx2,
    (x: &[T], dy: &[T], ch: [usize; 2], dims: [usize; 3], k: [usize; 3], pad: [usize; 3], dw: &mut [T]));
