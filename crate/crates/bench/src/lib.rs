//! Inputs shared by the benchmarks.

use medmus_core::geometry::{GridSpec, LabelVolume, Volume};
use medmus_core::phantom::{generate, Phantom, PhantomConfig};
use medmus_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Activation and 3x3x3 kernel at the size of the top desk-preset level.
pub fn desk_conv_inputs(channels: usize) -> (Tensor<f32>, Tensor<f32>) {
    let mut r = rng(1);
    let x = Tensor::randn([1, channels, 16, 48, 64], 1.0, &mut r);
    let w = Tensor::randn([channels, channels, 3, 3, 3], 0.1, &mut r);
    (x, w)
}

pub fn desk_phantom() -> (PhantomConfig, Phantom) {
    let cfg = PhantomConfig {
        seed: 2,
        ..Default::default()
    };
    let ph = generate(&cfg).expect("phantom");
    (cfg, ph)
}

/// Independent voxels with the given foreground probability.
pub fn random_mask(dims: [usize; 3], density: f64, seed: u64) -> LabelVolume {
    let mut r = rng(seed);
    let grid = GridSpec::new(dims, [0.5; 3], [0.0; 3]).expect("grid");
    let data = (0..grid.len()).map(|_| u8::from(r.random_bool(density))).collect();
    Volume::from_data(grid, data).expect("mask")
}
