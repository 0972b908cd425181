//! Intensity normalization and patch extraction.

use crate::error::{Error, Result};

/// Z-score over the whole buffer; a constant buffer maps to zeros.
pub fn normalize_intensity(data: &[f32]) -> Vec<f32> {
    if data.is_empty() {
        return Vec::new();
    }
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; data.len()];
    }
    data.iter().map(|&v| ((v as f64 - mean) / std) as f32).collect()
}

/// One training volume: normalized image and labels on a `(D, H, W)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub dims: [usize; 3],
    pub image: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Sample {
    pub fn new(dims: [usize; 3], image: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if image.len() != n || labels.len() != n {
            return Err(Error::shape("Sample::new", format!("buffers do not match {dims:?}")));
        }
        Ok(Sample { dims, image, labels })
    }
}

/// Copy the window starting at `origin` (may extend past the volume; outside
/// voxels get `fill`).
pub fn extract_patch<V: Copy>(data: &[V], dims: [usize; 3], origin: [usize; 3], patch: [usize; 3], fill: V) -> Vec<V> {
    let [d, h, w] = dims;
    let mut out = vec![fill; patch.iter().product()];
    for z in 0..patch[0] {
        let sz = origin[0] + z;
        if sz >= d {
            break;
        }
        for y in 0..patch[1] {
            let sy = origin[1] + y;
            if sy >= h {
                break;
            }
            let n = patch[2].min(w.saturating_sub(origin[2]));
            let src = (sz * h + sy) * w + origin[2];
            let dst = (z * patch[1] + y) * patch[2];
            out[dst..dst + n].copy_from_slice(&data[src..src + n]);
        }
    }
    out
}

/// Reverse a `(D, H, W)` buffer along the chosen axes.
pub fn flip<V: Copy>(data: &[V], dims: [usize; 3], axes: [bool; 3]) -> Vec<V> {
    let [d, h, w] = dims;
    let mut out = Vec::with_capacity(data.len());
    for z in 0..d {
        let sz = if axes[0] { d - 1 - z } else { z };
        for y in 0..h {
            let sy = if axes[1] { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if axes[2] { w - 1 - x } else { x };
                out.push(data[(sz * h + sy) * w + sx]);
            }
        }
    }
    out
}
