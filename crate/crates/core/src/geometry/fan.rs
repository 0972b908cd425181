//! Native acquisition geometry of a rotating side-fire probe.
//!
//! Each frame is a pseudo-sagittal plane containing the probe axis, taken at
//! rotation angle θ. World convention: the probe axis is `z`, the θ = 0 frame
//! lies in the `x > 0` half of the x–z plane, and θ increases towards `+y`.
//! A frame pixel `(u, v)` sits at axial distance `u * axial_spacing` along the
//! probe and at radius `probe_radius + v * radial_spacing` from the axis.

use serde::{Deserialize, Serialize};

use super::volume::{GridSpec, Payload};
use crate::error::{Error, Result};

pub const DEFAULT_PROBE_RADIUS_MM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanGeometry {
    pub probe_radius_mm: f64,
    /// Frame width along the probe axis.
    pub axial_pixels: usize,
    /// Frame height along the depth direction.
    pub radial_pixels: usize,
    /// `(axial, radial)` pixel spacing.
    pub pixel_spacing_mm: [f64; 2],
    pub angles_deg: Vec<f64>,
}

/// Cylindrical coordinates of a world point relative to a fan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FanCoord {
    pub theta_deg: f64,
    pub depth_mm: f64,
    pub axial_mm: f64,
    pub in_coverage: bool,
}

/// The two frames whose angles bracket a query angle, ordered by angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AngleBracket {
    pub lo: usize,
    pub hi: usize,
    /// Fraction of the way from `lo` to `hi`.
    pub t: f64,
}

impl FanGeometry {
    pub fn new(
        probe_radius_mm: f64,
        axial_pixels: usize,
        radial_pixels: usize,
        pixel_spacing_mm: [f64; 2],
        angles_deg: Vec<f64>,
    ) -> Result<Self> {
        let g = FanGeometry {
            probe_radius_mm,
            axial_pixels,
            radial_pixels,
            pixel_spacing_mm,
            angles_deg,
        };
        g.validate()?;
        Ok(g)
    }

    /// Evenly spaced sweep from `start_deg` to `end_deg` inclusive.
    pub fn sweep(
        probe_radius_mm: f64,
        axial_pixels: usize,
        radial_pixels: usize,
        pixel_spacing_mm: [f64; 2],
        start_deg: f64,
        end_deg: f64,
        frames: usize,
    ) -> Result<Self> {
        if frames < 2 {
            return Err(Error::Geometry("a sweep needs at least two frames".into()));
        }
        let step = (end_deg - start_deg) / (frames - 1) as f64;
        let angles = (0..frames).map(|i| start_deg + step * i as f64).collect();
        Self::new(probe_radius_mm, axial_pixels, radial_pixels, pixel_spacing_mm, angles)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.probe_radius_mm >= 0.0 && self.probe_radius_mm.is_finite()) {
            return Err(Error::Geometry("probe radius must be >= 0".into()));
        }
        if self.axial_pixels == 0 || self.radial_pixels == 0 {
            return Err(Error::Geometry("frame must be at least 1x1 pixels".into()));
        }
        if self.pixel_spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Geometry("pixel spacing must be positive".into()));
        }
        if self.angles_deg.len() < 2 {
            return Err(Error::Geometry("at least two frames are required".into()));
        }
        if self.angles_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::Geometry("angles must be finite".into()));
        }
        let increasing = self.angles_deg.windows(2).all(|w| w[1] > w[0]);
        let decreasing = self.angles_deg.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(Error::Geometry("angles must be strictly monotonic".into()));
        }
        let (lo, hi) = self.angle_range();
        if hi - lo >= 360.0 {
            return Err(Error::Geometry("angular sweep must be shorter than a full turn".into()));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn frame_len(&self) -> usize {
        self.axial_pixels * self.radial_pixels
    }

    pub fn angle_range(&self) -> (f64, f64) {
        let a = self.angles_deg[0];
        let b = *self.angles_deg.last().unwrap();
        (a.min(b), a.max(b))
    }

    /// Distance covered by the frame along the probe axis (first to last pixel centre).
    pub fn axial_extent_mm(&self) -> f64 {
        (self.axial_pixels - 1) as f64 * self.pixel_spacing_mm[0]
    }

    pub fn radial_extent_mm(&self) -> f64 {
        (self.radial_pixels - 1) as f64 * self.pixel_spacing_mm[1]
    }

    pub fn frame_to_world(&self, frame_index: usize, u: f64, v: f64) -> Result<[f64; 3]> {
        let theta = *self.angles_deg.get(frame_index).ok_or(Error::FrameIndex {
            index: frame_index,
            count: self.frame_count(),
        })?;
        Ok(self.fan_to_world(theta, v * self.pixel_spacing_mm[1], u * self.pixel_spacing_mm[0]))
    }

    #[inline]
    pub fn fan_to_world(&self, theta_deg: f64, depth_mm: f64, axial_mm: f64) -> [f64; 3] {
        let d = self.probe_radius_mm + depth_mm;
        let (s, c) = theta_deg.to_radians().sin_cos();
        [d * c, d * s, axial_mm]
    }

    pub fn world_to_fan(&self, p: [f64; 3]) -> FanCoord {
        let (lo, hi) = self.angle_range();
        let raw = p[1].atan2(p[0]).to_degrees();
        // Pick the branch of the angle that falls inside the sweep, if any.
        let theta = [raw, raw + 360.0, raw - 360.0]
            .into_iter()
            .find(|t| *t >= lo && *t <= hi)
            .unwrap_or(raw);
        let depth = p[0].hypot(p[1]) - self.probe_radius_mm;
        let axial = p[2];
        let in_coverage = theta >= lo
            && theta <= hi
            && depth >= 0.0
            && depth <= self.radial_extent_mm()
            && axial >= 0.0
            && axial <= self.axial_extent_mm();
        FanCoord {
            theta_deg: theta,
            depth_mm: depth,
            axial_mm: axial,
            in_coverage,
        }
    }

    /// Frames bracketing `theta_deg`, independent of the stack's sweep direction.
    pub(crate) fn bracket(&self, order: &[usize], theta_deg: f64) -> Option<AngleBracket> {
        let angle = |k: usize| self.angles_deg[order[k]];
        let n = order.len();
        if theta_deg < angle(0) || theta_deg > angle(n - 1) {
            return None;
        }
        // First sorted position whose angle exceeds theta.
        let pos = order.partition_point(|&i| self.angles_deg[i] <= theta_deg);
        let hi_pos = pos.clamp(1, n - 1);
        let lo_pos = hi_pos - 1;
        let (a0, a1) = (angle(lo_pos), angle(hi_pos));
        Some(AngleBracket {
            lo: order[lo_pos],
            hi: order[hi_pos],
            t: ((theta_deg - a0) / (a1 - a0)).clamp(0.0, 1.0),
        })
    }

    /// Frame indices sorted by ascending angle.
    pub(crate) fn ascending_order(&self) -> Vec<usize> {
        let n = self.frame_count();
        if self.angles_deg[0] <= self.angles_deg[n - 1] {
            (0..n).collect()
        } else {
            (0..n).rev().collect()
        }
    }

    /// Smallest axis-aligned Cartesian grid covering the whole fan.
    ///
    /// `spacing_mm` defaults to the finer of the two in-plane spacings.
    pub fn covering_grid(&self, spacing_mm: Option<f64>) -> Result<GridSpec> {
        let s = spacing_mm.unwrap_or(self.pixel_spacing_mm[0].min(self.pixel_spacing_mm[1]));
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Geometry(format!("grid spacing must be positive, got {s}")));
        }
        let (lo, hi) = self.angle_range();
        let r0 = self.probe_radius_mm;
        let r1 = r0 + self.radial_extent_mm();
        let mut angles = vec![lo, hi];
        let first = (lo / 90.0).ceil() as i64;
        let last = (hi / 90.0).floor() as i64;
        angles.extend((first..=last).map(|q| q as f64 * 90.0));
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &a in &angles {
            for &r in &[r0, r1] {
                let p = self.fan_to_world(a, r - r0, 0.0);
                xmin = xmin.min(p[0]);
                xmax = xmax.max(p[0]);
                ymin = ymin.min(p[1]);
                ymax = ymax.max(p[1]);
            }
        }
        let count = |extent: f64| (extent / s - 1e-9).ceil().max(0.0) as usize + 1;
        GridSpec::new(
            [count(xmax - xmin), count(ymax - ymin), count(self.axial_extent_mm())],
            [s; 3],
            [xmin, ymin, 0.0],
        )
    }
}

/// One 2D array per rotation angle, rows along depth and columns along the probe axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack<T> {
    geometry: FanGeometry,
    frames: Vec<Vec<T>>,
}

pub type IntensityStack = FrameStack<f32>;
pub type LabelStack = FrameStack<u8>;

impl<T: Payload> FrameStack<T> {
    pub fn new(geometry: FanGeometry, frames: Vec<Vec<T>>) -> Result<Self> {
        geometry.validate()?;
        if frames.len() != geometry.frame_count() {
            return Err(Error::shape(
                "frame stack",
                format!("{} frames for {} angles", frames.len(), geometry.frame_count()),
            ));
        }
        let len = geometry.frame_len();
        for (i, f) in frames.iter().enumerate() {
            if f.len() != len {
                return Err(Error::shape(
                    "frame stack",
                    format!("frame {i} has {} pixels, expected {len}", f.len()),
                ));
            }
            if f.iter().any(|v| !v.is_valid()) {
                return Err(Error::Input(format!("frame {i} contains non-finite values")));
            }
        }
        Ok(FrameStack { geometry, frames })
    }

    pub fn filled(geometry: FanGeometry, value: T) -> Result<Self> {
        geometry.validate()?;
        let frames = vec![vec![value; geometry.frame_len()]; geometry.frame_count()];
        Ok(FrameStack { geometry, frames })
    }

    pub fn geometry(&self) -> &FanGeometry {
        &self.geometry
    }

    pub fn frames(&self) -> &[Vec<T>] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.frames
    }

    pub fn frame(&self, i: usize) -> &[T] {
        &self.frames[i]
    }

    #[inline]
    pub fn get(&self, frame: usize, v: usize, u: usize) -> T {
        self.frames[frame][v * self.geometry.axial_pixels + u]
    }

    pub fn map<U: Payload>(&self, f: impl Fn(T) -> U) -> FrameStack<U> {
        FrameStack {
            geometry: self.geometry.clone(),
            frames: self
                .frames
                .iter()
                .map(|fr| fr.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }

    /// Frames reversed together with their angles; describes the same acquisition.
    pub fn reversed(&self) -> Self {
        let mut geometry = self.geometry.clone();
        geometry.angles_deg.reverse();
        let mut frames = self.frames.clone();
        frames.reverse();
        FrameStack { geometry, frames }
    }

    /// All pixels of all frames, frame-major.
    pub fn flatten(&self) -> Vec<T> {
        self.frames.iter().flatten().copied().collect()
    }

    pub(crate) fn sample_bilinear(&self, frame: usize, v: f64, u: f64) -> f64 {
        let g = &self.geometry;
        let (nu, nv) = (g.axial_pixels, g.radial_pixels);
        let u = u.clamp(0.0, (nu - 1) as f64);
        let v = v.clamp(0.0, (nv - 1) as f64);
        let u0 = (u.floor() as usize).min(nu.saturating_sub(2));
        let v0 = (v.floor() as usize).min(nv.saturating_sub(2));
        let (u1, v1) = ((u0 + 1).min(nu - 1), (v0 + 1).min(nv - 1));
        let fu = u - u0 as f64;
        let fv = v - v0 as f64;
        let f = &self.frames[frame];
        let at = |vv: usize, uu: usize| f[vv * nu + uu].to_f64();
        let top = at(v0, u0) * (1.0 - fu) + at(v0, u1) * fu;
        let bottom = at(v1, u0) * (1.0 - fu) + at(v1, u1) * fu;
        top * (1.0 - fv) + bottom * fv
    }

    pub(crate) fn sample_nearest(&self, frame: usize, v: f64, u: f64) -> T {
        let g = &self.geometry;
        let u = ((u + 0.5).floor().max(0.0) as usize).min(g.axial_pixels - 1);
        let v = ((v + 0.5).floor().max(0.0) as usize).min(g.radial_pixels - 1);
        self.get(frame, v, u)
    }
}
