//! Convolution kernels against a naive loop and the adjoint identity.

use medmus_core::tensor::conv::conv_transpose_out_dims;
use medmus_core::tensor::{conv3d, conv_transpose3d, ConvGeom, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seven nested loops straight from the definition.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], g: &ConvGeom) -> Tensor<f64> {
    let [b, ci, d, h, wd] = x.shape();
    let [co, _, kd, kh, kw] = w.shape();
    let dims = [d, h, wd];
    let k = [kd, kh, kw];
    let out: [usize; 3] = std::array::from_fn(|a| (dims[a] + 2 * g.padding[a] - k[a]) / g.stride[a] + 1);
    let mut y = Tensor::zeros([b, co, out[0], out[1], out[2]]);
    let xs = x.data();
    let ws = w.data();
    for n in 0..b {
        for o in 0..co {
            for z in 0..out[0] {
                for r in 0..out[1] {
                    for c in 0..out[2] {
                        let mut acc = bias[o];
                        for i in 0..ci {
                            for dz in 0..kd {
                                for dr in 0..kh {
                                    for dc in 0..kw {
                                        let p = [z * g.stride[0] + dz, r * g.stride[1] + dr, c * g.stride[2] + dc];
                                        if (0..3).any(|a| p[a] < g.padding[a] || p[a] - g.padding[a] >= dims[a]) {
                                            continue;
                                        }
                                        let [pz, pr, pc] = [0, 1, 2].map(|a| p[a] - g.padding[a]);
                                        let xv = xs[(((n * ci + i) * d + pz) * h + pr) * wd + pc];
                                        let wv = ws[(((o * ci + i) * kd + dz) * kh + dr) * kw + dc];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        y.data_mut()[(((n * co + o) * out[0] + z) * out[1] + r) * out[2] + c] = acc;
                    }
                }
            }
        }
    }
    y
}

/// Random shape, kernel and geometry for which the adjoint maps the conv
/// output back onto exactly the input size.
fn random_case(rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>, ConvGeom) {
    let (stride, k, pad, dims) = loop {
        let stride = rng.random_range(1..=2usize);
        let k = rng.random_range(1..=3usize);
        let pad = rng.random_range(0..k);
        let out: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..=4));
        // Input size whose convolution has exactly `out` positions.
        let dims = out.map(|o| ((o - 1) * stride + k) as isize - 2 * pad as isize);
        if dims.iter().all(|&d| d >= 1) {
            break (stride, k, pad, dims.map(|d| d as usize));
        }
    };
    let b = rng.random_range(1..=2);
    let ci = rng.random_range(1..=3);
    let co = rng.random_range(1..=3);
    let x = Tensor::randn([b, ci, dims[0], dims[1], dims[2]], 1.0, rng);
    let w = Tensor::randn([co, ci, k, k, k], 1.0, rng);
    (x, w, ConvGeom::strided(stride, pad))
}

#[test]
fn matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tried = 0;
    while tried < 40 {
        let (x, w, g) = random_case(&mut rng);
        let bias: Vec<f64> = (0..w.shape()[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let Ok(y) = conv3d(&x, &w, &bias, &g) else { continue };
        let reference = naive_conv(&x, &w, &bias, &g);
        assert_eq!(y.shape(), reference.shape());
        assert!(y.max_abs_diff(&reference) < 1e-12, "{:?} {:?}", x.shape(), g);
        tried += 1;
    }
    // The stride-1 "same" 3x3x3 path used throughout the network.
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = Tensor::randn([2, 3, 5, 7, 9], 1.0, &mut rng);
        let w = Tensor::randn([4, 3, 3, 3, 3], 1.0, &mut rng);
        let bias = [0.1, -0.2, 0.3, 0.0];
        let g = ConvGeom::same(3);
        let y = conv3d(&x, &w, &bias, &g).unwrap();
        assert!(y.max_abs_diff(&naive_conv(&x, &w, &bias, &g)) < 1e-12);
        let y32 = conv3d(&x.cast::<f32>(), &w.cast::<f32>(), &bias.map(|v| v as f32), &g).unwrap();
        assert!(y32.cast::<f64>().max_abs_diff(&y) < 1e-4);
    }
}

#[test]
fn transpose_is_the_adjoint_on_twenty_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut done = 0;
    let mut worst = 0.0f64;
    while done < 20 {
        let (x, w, g) = random_case(&mut rng);
        let k = [w.shape()[2]; 3];
        let Ok(y) = conv3d(&x, &w, &vec![0.0; w.shape()[0]], &g) else { continue };
        if conv_transpose_out_dims(y.spatial(), k, &g).ok() != Some(x.spatial()) {
            continue;
        }
        let v = Tensor::randn(y.shape(), 1.0, &mut rng);
        let back = conv_transpose3d(&v, &w, &vec![0.0; w.shape()[1]], &g).unwrap();
        let lhs = y.dot(&v);
        let rhs = x.dot(&back);
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0);
        worst = worst.max(rel);
        done += 1;
    }
    assert!(worst < 1e-10, "worst relative gap {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convolution_is_linear_in_the_input(seed in any::<u64>(), a in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1 = Tensor::randn([1, 2, 4, 5, 3], 1.0, &mut rng);
        let x2 = Tensor::randn([1, 2, 4, 5, 3], 1.0, &mut rng);
        let w = Tensor::randn([3, 2, 3, 3, 3], 1.0, &mut rng);
        let g = ConvGeom::same(3);
        let zero = [0.0; 3];
        let mut combo = x1.map(|v| a * v);
        combo.add_assign(&x2);
        let lhs = conv3d(&combo, &w, &zero, &g).unwrap();
        let mut rhs = conv3d(&x1, &w, &zero, &g).unwrap().map(|v| a * v);
        rhs.add_assign(&conv3d(&x2, &w, &zero, &g).unwrap());
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }
}
