//! Sliding-window prediction over whole volumes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{extract_patch, normalize_intensity};
use super::net::Model;
use crate::error::{Error, Result};
use crate::geometry::Volume;
use crate::tensor::{Graph, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowWeighting {
    Uniform,
    /// Gaussian importance map with sigma = patch / 8 per axis.
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictOptions {
    /// Fraction of the patch shared by neighbouring windows, in `[0, 1)`.
    pub overlap: f64,
    pub weighting: WindowWeighting,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            overlap: 0.5,
            weighting: WindowWeighting::Gaussian,
        }
    }
}

/// Full-resolution output: foreground probability `1 - P[0]` and argmax labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub foreground: Volume<f32>,
    pub labels: Volume<u8>,
}

/// Evenly spaced window starts covering `[0, size)`; a single start when the
/// patch is at least as large as the axis.
pub fn window_starts(size: usize, patch: usize, overlap: f64) -> Vec<usize> {
    if size <= patch {
        return vec![0];
    }
    let step = (patch as f64 * (1.0 - overlap)).max(1.0);
    let span = (size - patch) as f64;
    let n = (span / step).ceil() as usize + 1;
    (0..n).map(|i| (i as f64 * span / (n - 1) as f64).round() as usize).collect()
}

/// Per-voxel window weights, peak 1.
pub fn importance_map(patch: [usize; 3], weighting: WindowWeighting) -> Vec<f64> {
    let n = patch.iter().product();
    match weighting {
        WindowWeighting::Uniform => vec![1.0; n],
        WindowWeighting::Gaussian => {
            let axis = |p: usize| -> Vec<f64> {
                let c = (p as f64 - 1.0) / 2.0;
                let s = p as f64 / 8.0;
                (0..p).map(|i| (-0.5 * ((i as f64 - c) / s).powi(2)).exp()).collect()
            };
            let (a, b, c) = (axis(patch[0]), axis(patch[1]), axis(patch[2]));
            let mut w = Vec::with_capacity(n);
            for z in &a {
                for y in &b {
                    for x in &c {
                        w.push(z * y * x);
                    }
                }
            }
            let peak = w.iter().cloned().fold(0.0, f64::max);
            let floor = w.iter().cloned().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
            w.iter().map(|&v| v.max(floor) / peak).collect()
        }
    }
}

fn run_window<T: Scalar>(model: &Model<T>, patch_data: Vec<f32>, patch: [usize; 3]) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let params = model.bind(&mut g, false);
    let x = Tensor::from_vec(
        [1, 1, patch[0], patch[1], patch[2]],
        patch_data.iter().map(|&v| T::from_f64(v as f64)).collect(),
    )?;
    let xv = g.constant(x);
    let out = model.forward(&mut g, &params, xv)?;
    let p = g.value(out.probs[0]);
    Ok((0..p.channels()).map(|c| p.plane(0, c).iter().map(|v| v.to_f64()).collect()).collect())
}

/// Predict a whole intensity volume. The volume is z-scored as in training,
/// windows are zero-padded where they overhang, and overlapping windows are
/// blended with the chosen importance map.
pub fn predict_volume<T: Scalar>(model: &Model<T>, volume: &Volume<f32>, opts: &PredictOptions) -> Result<Prediction> {
    if !(0.0..1.0).contains(&opts.overlap) {
        return Err(Error::Config(format!("overlap {} not in [0, 1)", opts.overlap)));
    }
    let [nx, ny, nz] = volume.dims();
    let dims = [nz, ny, nx];
    let patch = model.config().patch_size;
    let classes = model.config().num_classes;
    let image = normalize_intensity(volume.data());
    let weights = importance_map(patch, opts.weighting);

    let mut windows = Vec::new();
    for &z in &window_starts(dims[0], patch[0], opts.overlap) {
        for &y in &window_starts(dims[1], patch[1], opts.overlap) {
            for &x in &window_starts(dims[2], patch[2], opts.overlap) {
                windows.push([z, y, x]);
            }
        }
    }
    let results: Vec<Result<Vec<Vec<f64>>>> = windows
        .par_iter()
        .map(|&origin| run_window(model, extract_patch(&image, dims, origin, patch, 0.0), patch))
        .collect();

    let n = image.len();
    let mut acc = vec![vec![0.0f64; n]; classes];
    let mut norm = vec![0.0f64; n];
    for (origin, probs) in windows.iter().zip(results) {
        let probs = probs?;
        for pz in 0..patch[0] {
            let z = origin[0] + pz;
            if z >= dims[0] {
                break;
            }
            for py in 0..patch[1] {
                let y = origin[1] + py;
                if y >= dims[1] {
                    break;
                }
                for px in 0..patch[2] {
                    let x = origin[2] + px;
                    if x >= dims[2] {
                        break;
                    }
                    let pi = (pz * patch[1] + py) * patch[2] + px;
                    let vi = (z * dims[1] + y) * dims[2] + x;
                    let w = weights[pi];
                    norm[vi] += w;
                    for (a, p) in acc.iter_mut().zip(&probs) {
                        a[vi] += w * p[pi];
                    }
                }
            }
        }
    }

    let grid = volume.grid().clone();
    let mut fg = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = 0;
        for c in 1..classes {
            if acc[c][i] > acc[best][i] {
                best = c;
            }
        }
        fg.push((1.0 - acc[0][i] / norm[i]) as f32);
        labels.push(best as u8);
    }
    Ok(Prediction {
        foreground: Volume::from_data(grid.clone(), fg)?,
        labels: Volume::from_data(grid, labels)?,
    })
}
