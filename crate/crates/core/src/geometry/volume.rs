use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a grid of samples carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    /// B-mode echo intensity, nominally in 0..=255.
    Intensity,
    /// Non-negative integer class labels.
    Label,
}

/// Element type stored in volumes and frame stacks.
///
/// Intensities are `f32`, labels are `u8`. Only intensities support linear
/// interpolation; labels must be resampled with nearest neighbour.
pub trait Payload: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    const KIND: PayloadKind;

    fn to_f64(self) -> f64;

    /// Rebuild a value from an interpolated real. Labels never reach this
    /// through linear interpolation.
    fn from_f64(v: f64) -> Self;

    fn is_valid(self) -> bool;
}

impl Payload for f32 {
    const KIND: PayloadKind = PayloadKind::Intensity;

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn is_valid(self) -> bool {
        self.is_finite()
    }
}

impl Payload for u8 {
    const KIND: PayloadKind = PayloadKind::Label;

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, 255.0) as u8
    }

    #[inline]
    fn is_valid(self) -> bool {
        true
    }
}

/// Placement of a Cartesian voxel grid in world millimetres.
///
/// Voxel `(i, j, k)` has its centre at `origin + (i, j, k) * spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Result<Self> {
        let grid = GridSpec {
            dims,
            spacing_mm,
            origin_mm,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Geometry(format!("grid dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Geometry(format!(
                "grid spacing must be positive, got {:?}",
                self.spacing_mm
            )));
        }
        if self.origin_mm.iter().any(|o| !o.is_finite()) {
            return Err(Error::Geometry("grid origin must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + i as f64 * self.spacing_mm[0],
            self.origin_mm[1] + j as f64 * self.spacing_mm[1],
            self.origin_mm[2] + k as f64 * self.spacing_mm[2],
        ]
    }

    /// Continuous voxel coordinates of a world point.
    #[inline]
    pub fn to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin_mm[0]) / self.spacing_mm[0],
            (p[1] - self.origin_mm[1]) / self.spacing_mm[1],
            (p[2] - self.origin_mm[2]) / self.spacing_mm[2],
        ]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm.iter().product()
    }
}

/// Dense Cartesian 3D grid of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    grid: GridSpec,
    data: Vec<T>,
}

pub type IntensityVolume = Volume<f32>;
pub type LabelVolume = Volume<u8>;

impl<T: Payload> Volume<T> {
    pub fn filled(grid: GridSpec, value: T) -> Result<Self> {
        grid.validate()?;
        let n = grid.len();
        Ok(Volume {
            grid,
            data: vec![value; n],
        })
    }

    pub fn from_data(grid: GridSpec, data: Vec<T>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::shape(
                "volume",
                format!("{} samples for dims {:?}", data.len(), grid.dims),
            ));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_valid()) {
            return Err(Error::Input(format!("non-finite sample at index {bad}")));
        }
        Ok(Volume { grid, data })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let idx = self.grid.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn map<U: Payload>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_grid<U>(&self, other: &Volume<U>) -> bool {
        self.grid == other.grid
    }

    /// Sample at continuous voxel coordinates. Returns `None` outside the grid.
    pub fn sample_linear(&self, c: [f64; 3]) -> Option<f64> {
        let [nx, ny, _] = self.grid.dims;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let n = self.grid.dims[a];
            let x = c[a];
            if !(x >= -1e-9 && x <= (n - 1) as f64 + 1e-9) {
                return None;
            }
            let x = x.clamp(0.0, (n - 1) as f64);
            let i0 = (x.floor() as usize).min(n.saturating_sub(2));
            base[a] = i0;
            frac[a] = if n == 1 { 0.0 } else { x - i0 as f64 };
        }
        let step = |a: usize| usize::from(self.grid.dims[a] > 1);
        let (sx, sy, sz) = (step(0), step(1) * nx, step(2) * nx * ny);
        let i000 = base[0] + nx * (base[1] + ny * base[2]);
        let v = |idx: usize| self.data[idx].to_f64();
        let [fx, fy, fz] = frac;
        let c00 = v(i000) * (1.0 - fx) + v(i000 + sx) * fx;
        let c10 = v(i000 + sy) * (1.0 - fx) + v(i000 + sy + sx) * fx;
        let c01 = v(i000 + sz) * (1.0 - fx) + v(i000 + sz + sx) * fx;
        let c11 = v(i000 + sz + sy) * (1.0 - fx) + v(i000 + sz + sy + sx) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        Some(c0 * (1.0 - fz) + c1 * fz)
    }

    /// Trilinear stencil at continuous voxel coordinates: the eight corner
    /// indices with their weights. `None` outside the grid.
    fn stencil(&self, c: [f64; 3]) -> Option<[(usize, f64); 8]> {
        let [nx, ny, _] = self.grid.dims;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let n = self.grid.dims[a];
            let x = c[a];
            if !(x >= -1e-9 && x <= (n - 1) as f64 + 1e-9) {
                return None;
            }
            let x = x.clamp(0.0, (n - 1) as f64);
            let i0 = (x.floor() as usize).min(n.saturating_sub(2));
            base[a] = i0;
            frac[a] = if n == 1 { 0.0 } else { x - i0 as f64 };
        }
        let step = |a: usize| usize::from(self.grid.dims[a] > 1);
        let (sx, sy, sz) = (step(0), step(1) * nx, step(2) * nx * ny);
        let i000 = base[0] + nx * (base[1] + ny * base[2]);
        let mut out = [(0usize, 0.0f64); 8];
        for (n, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = (n & 1, (n >> 1) & 1, n >> 2);
            let w = |d: usize, f: f64| if d == 1 { f } else { 1.0 - f };
            *slot = (
                i000 + dx * sx + dy * sy + dz * sz,
                w(dx, frac[0]) * w(dy, frac[1]) * w(dz, frac[2]),
            );
        }
        Some(out)
    }

    /// Trilinear sample restricted to voxels with a non-zero `valid` entry,
    /// weights renormalised. `None` outside the grid or when no valid voxel
    /// carries weight.
    pub(crate) fn sample_linear_masked(&self, c: [f64; 3], valid: &[u8]) -> Option<f64> {
        let (mut sum, mut wsum) = (0.0, 0.0);
        for (idx, w) in self.stencil(c)? {
            if valid[idx] != 0 && w > 0.0 {
                sum += w * self.data[idx].to_f64();
                wsum += w;
            }
        }
        (wsum > 1e-12).then(|| sum / wsum)
    }

    /// The valid stencil voxel with the largest weight, later corners winning
    /// ties so that exact halves round up as in [`sample_nearest`](Self::sample_nearest).
    pub(crate) fn sample_nearest_masked(&self, c: [f64; 3], valid: &[u8]) -> Option<T> {
        let mut best: Option<(usize, f64)> = None;
        for (idx, w) in self.stencil(c)? {
            if valid[idx] != 0 && w > 0.0 && best.is_none_or(|(_, bw)| w >= bw) {
                best = Some((idx, w));
            }
        }
        best.map(|(idx, _)| self.data[idx])
    }

    /// Nearest-voxel sample at continuous voxel coordinates.
    pub fn sample_nearest(&self, c: [f64; 3]) -> Option<T> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let r = (c[a] + 0.5).floor();
            if r < 0.0 || r > (self.grid.dims[a] - 1) as f64 {
                return None;
            }
            idx[a] = r as usize;
        }
        Some(self.get(idx[0], idx[1], idx[2]))
    }
}

impl LabelVolume {
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }
}
