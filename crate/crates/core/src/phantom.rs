//! Synthetic fan-geometry acquisitions with known prostate and lesion labels.
//!
//! The scene is analytic: a textured background, a brighter ellipsoidal gland
//! and darker ellipsoidal lesions with soft edges. It is rendered on a fine
//! Cartesian grid, projected into the native frames and multiplied by
//! unit-mean gamma speckle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    project_to_frames, FanGeometry, GridSpec, IntensityStack, Interp, LabelStack, LabelVolume, Volume,
};

/// Axis-aligned ellipsoid in world millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
}

impl Ellipsoid {
    /// `Σ ((p - c) / a)²`; at most 1 inside.
    #[inline]
    pub fn level(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|i| ((p[i] - self.center_mm[i]) / self.semi_axes_mm[i]).powi(2))
            .sum()
    }

    #[inline]
    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.level(p) <= 1.0
    }

    pub fn volume_mm3(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes_mm.iter().product::<f64>()
    }

    /// Approximate signed distance to the surface, negative inside.
    fn signed_distance(&self, p: [f64; 3]) -> f64 {
        let min_axis = self.semi_axes_mm.iter().cloned().fold(f64::MAX, f64::min);
        (self.level(p).sqrt() - 1.0) * min_axis
    }

    /// Whether every point of the surface lies within `outer`, checked on a
    /// dense spherical point set.
    fn inside(&self, outer: &Ellipsoid) -> bool {
        const N: usize = 400;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..N).all(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / N as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let d = [r * phi.cos(), r * phi.sin(), z];
            let p = [0, 1, 2].map(|k| self.center_mm[k] + d[k] * self.semi_axes_mm[k]);
            outer.contains(p)
        })
    }
}

/// Weight 1 well inside a surface, 0 well outside, with a logistic ramp of
/// width `softness` mm across it; a hard step when `softness` is 0.
fn edge_weight(signed_distance: f64, softness: f64) -> f64 {
    if softness <= 0.0 {
        return if signed_distance <= 0.0 { 1.0 } else { 0.0 };
    }
    1.0 / (1.0 + (signed_distance / softness * 4.0).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub seed: u64,
    pub geometry: FanGeometry,
    /// Spacing of the output Cartesian masks; the finer pixel spacing when unset.
    pub grid_spacing_mm: Option<f64>,
    /// Gland centre; the middle of the fan when unset.
    pub prostate_center_mm: Option<[f64; 3]>,
    pub prostate_semi_axes_mm: [f64; 3],
    pub lesion_count: usize,
    /// Range of the mean lesion radius.
    pub lesion_radius_mm: [f64; 2],
    /// Explicit lesions; replaces random placement when set.
    pub lesions: Option<Vec<Ellipsoid>>,
    /// Background-to-lesion echo ratio; 1 makes lesions invisible.
    pub contrast: f64,
    pub lesion_softness_mm: f64,
    /// Standard deviation of the unit-mean gamma speckle; 0 disables it.
    pub speckle_std: f64,
    /// Relative amplitude of the smooth background texture.
    pub texture: f64,
    pub background_level: f64,
    pub prostate_level: f64,
    /// Number of radial attenuation wedges.
    pub shadows: usize,
    /// Render grid refinement relative to the output grid.
    pub oversample: usize,
}

/// Fan used at desk scale: 16 axial x 62 radial pixels of 0.5 mm over a 32
/// degree sweep, whose covering grid fits one 16 x 48 x 64 network patch.
pub fn desk_geometry() -> FanGeometry {
    FanGeometry::sweep(10.0, 16, 62, [0.5, 0.5], -16.0, 16.0, 48).expect("valid desk geometry")
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            seed: 0,
            geometry: desk_geometry(),
            grid_spacing_mm: None,
            prostate_center_mm: None,
            prostate_semi_axes_mm: [10.0, 5.0, 3.2],
            lesion_count: 1,
            lesion_radius_mm: [1.6, 2.4],
            lesions: None,
            contrast: 1.5,
            lesion_softness_mm: 0.5,
            speckle_std: 0.3,
            texture: 0.15,
            background_level: 60.0,
            prostate_level: 120.0,
            shadows: 0,
            oversample: 2,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        for &a in &self.prostate_semi_axes_mm {
            positive("prostate semi-axis", a)?;
        }
        positive("contrast", self.contrast)?;
        positive("minimum lesion radius", self.lesion_radius_mm[0])?;
        if self.lesion_radius_mm[1] < self.lesion_radius_mm[0] {
            return Err(Error::Config("lesion radius range is reversed".into()));
        }
        for (name, v) in [
            ("speckle std", self.speckle_std),
            ("texture", self.texture),
            ("lesion softness", self.lesion_softness_mm),
            ("background level", self.background_level),
            ("prostate level", self.prostate_level),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.oversample == 0 {
            return Err(Error::Config("oversample must be at least 1".into()));
        }
        if let Some(ls) = &self.lesions {
            for l in ls {
                for &a in &l.semi_axes_mm {
                    positive("lesion semi-axis", a)?;
                }
            }
        }
        Ok(())
    }

    pub fn prostate(&self) -> Ellipsoid {
        let g = &self.geometry;
        let center = self.prostate_center_mm.unwrap_or_else(|| {
            let (lo, hi) = g.angle_range();
            g.fan_to_world(0.5 * (lo + hi), 0.5 * g.radial_extent_mm(), 0.5 * g.axial_extent_mm())
        });
        Ellipsoid {
            center_mm: center,
            semi_axes_mm: self.prostate_semi_axes_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Wave {
    k: [f64; 3],
    phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Shadow {
    theta_deg: f64,
    half_width_deg: f64,
    start_depth_mm: f64,
    attenuation: f64,
}

/// The analytic scene behind a phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub prostate: Ellipsoid,
    pub lesions: Vec<Ellipsoid>,
    waves: Vec<Wave>,
    shadows: Vec<Shadow>,
}

impl Scene {
    pub fn in_lesion(&self, p: [f64; 3]) -> bool {
        self.lesions.iter().any(|l| l.contains(p))
    }

    /// Noise-free echo intensity at a world point.
    fn echo(&self, cfg: &PhantomConfig, p: [f64; 3]) -> f64 {
        let gland = edge_weight(self.prostate.signed_distance(p), 1.0);
        let mut level = cfg.background_level + (cfg.prostate_level - cfg.background_level) * gland;
        let tex: f64 = self
            .waves
            .iter()
            .map(|w| (w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase).sin())
            .sum::<f64>()
            / self.waves.len().max(1) as f64;
        level *= 1.0 + cfg.texture * tex;
        for l in &self.lesions {
            let w = edge_weight(l.signed_distance(p), cfg.lesion_softness_mm);
            level *= 1.0 - w * (1.0 - 1.0 / cfg.contrast);
        }
        let g = &cfg.geometry;
        for s in &self.shadows {
            let c = g.world_to_fan(p);
            if (c.theta_deg - s.theta_deg).abs() <= s.half_width_deg && c.depth_mm >= s.start_depth_mm {
                level *= s.attenuation;
            }
        }
        level
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub scene: Scene,
    pub intensity: IntensityStack,
    /// Lesion labels in the native frames.
    pub labels: LabelStack,
    /// Gland labels in the native frames.
    pub prostate_frames: LabelStack,
    /// Gland mask on the output Cartesian grid.
    pub prostate: LabelVolume,
    /// Lesion mask on the output Cartesian grid.
    pub lesion_mask: LabelVolume,
}

const PLACEMENT_ATTEMPTS: usize = 10_000;

fn place_lesions(cfg: &PhantomConfig, prostate: &Ellipsoid, rng: &mut ChaCha8Rng) -> Result<Vec<Ellipsoid>> {
    if let Some(ls) = &cfg.lesions {
        for (i, l) in ls.iter().enumerate() {
            if !l.inside(prostate) {
                return Err(Error::Config(format!("lesion {} lies outside the prostate", i + 1)));
            }
        }
        return Ok(ls.clone());
    }
    let mut out: Vec<Ellipsoid> = Vec::with_capacity(cfg.lesion_count);
    let [rlo, rhi] = cfg.lesion_radius_mm;
    for _ in 0..cfg.lesion_count {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let r = if rhi > rlo { rng.random_range(rlo..=rhi) } else { rlo };
            let axes = [0; 3].map(|_: i32| r * rng.random_range(0.8..1.2));
            let center = [0, 1, 2].map(|k| {
                let a = prostate.semi_axes_mm[k];
                prostate.center_mm[k] + rng.random_range(-a..=a)
            });
            let cand = Ellipsoid {
                center_mm: center,
                semi_axes_mm: axes,
            };
            let apart = out.iter().all(|o| {
                let d: f64 = (0..3).map(|k| (o.center_mm[k] - center[k]).powi(2)).sum::<f64>().sqrt();
                let reach = |e: &Ellipsoid| e.semi_axes_mm.iter().cloned().fold(0.0, f64::max);
                d > reach(o) + reach(&cand) + 1.0
            });
            if apart && cand.inside(prostate) {
                placed = Some(cand);
                break;
            }
        }
        out.push(placed.ok_or_else(|| {
            Error::Config(format!(
                "could not place {} lesions of radius {rlo}-{rhi} mm inside the prostate",
                cfg.lesion_count
            ))
        })?);
    }
    Ok(out)
}

fn render<T: crate::geometry::Payload>(grid: &GridSpec, f: impl Fn([f64; 3]) -> T + Sync) -> Result<Volume<T>> {
    use rayon::prelude::*;
    let data: Vec<T> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let [i, j, k] = grid.coords(idx);
            f(grid.voxel_center(i, j, k))
        })
        .collect();
    Volume::from_data(grid.clone(), data)
}

/// Cartesian grid of the phantom's output masks.
pub fn output_grid(cfg: &PhantomConfig) -> Result<GridSpec> {
    cfg.geometry.covering_grid(cfg.grid_spacing_mm)
}

pub fn generate(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prostate = cfg.prostate();
    let lesions = place_lesions(cfg, &prostate, &mut rng)?;
    let waves = (0..3)
        .map(|_| {
            let wavelength = rng.random_range(3.0..8.0);
            let mut dir = [0; 3].map(|_: i32| rng.random_range(-1.0..1.0f64));
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            dir.iter_mut().for_each(|v| *v *= 2.0 * std::f64::consts::PI / (wavelength * norm));
            Wave {
                k: dir,
                phase: rng.random_range(0.0..2.0 * std::f64::consts::PI),
            }
        })
        .collect();
    let (lo, hi) = cfg.geometry.angle_range();
    let shadows = (0..cfg.shadows)
        .map(|_| Shadow {
            theta_deg: rng.random_range(lo..=hi),
            half_width_deg: rng.random_range(0.5..2.0),
            start_depth_mm: rng.random_range(0.3..0.7) * cfg.geometry.radial_extent_mm(),
            attenuation: rng.random_range(0.3..0.6),
        })
        .collect();
    let scene = Scene {
        prostate,
        lesions,
        waves,
        shadows,
    };

    let grid = output_grid(cfg)?;
    let fine = {
        let s = grid.spacing_mm[0] / cfg.oversample as f64;
        let dims = [0, 1, 2].map(|a| (grid.dims[a] - 1) * cfg.oversample + 1);
        GridSpec::new(dims, [s; 3], grid.origin_mm)?
    };
    let echo = render(&fine, |p| scene.echo(cfg, p) as f32)?;
    let fine_lesions = render(&fine, |p| u8::from(scene.in_lesion(p)))?;
    let fine_gland = render(&fine, |p| u8::from(scene.prostate.contains(p)))?;
    let g = &cfg.geometry;
    let mut intensity = project_to_frames(&echo, g, Interp::Trilinear, 0.0)?;
    let labels = project_to_frames(&fine_lesions, g, Interp::Nearest, 0)?;
    let prostate_frames = project_to_frames(&fine_gland, g, Interp::Nearest, 0)?;

    if cfg.speckle_std > 0.0 {
        let shape = 1.0 / (cfg.speckle_std * cfg.speckle_std);
        let gamma = Gamma::new(shape, 1.0 / shape).map_err(|e| Error::Config(format!("speckle: {e}")))?;
        for frame in intensity.frames_mut() {
            for v in frame.iter_mut() {
                let s: f64 = gamma.sample(&mut rng);
                *v = (*v as f64 * s).clamp(0.0, 255.0) as f32;
            }
        }
    } else {
        for frame in intensity.frames_mut() {
            frame.iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
        }
    }

    let prostate_mask = render(&grid, |p| u8::from(scene.prostate.contains(p)))?;
    let lesion_mask = render(&grid, |p| u8::from(scene.in_lesion(p)))?;
    Ok(Phantom {
        scene,
        intensity,
        labels,
        prostate_frames,
        prostate: prostate_mask,
        lesion_mask,
    })
}
