//! Scan conversion between fan frame stacks and Cartesian volumes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fan::{FanGeometry, FrameStack};
use super::volume::{GridSpec, Payload, PayloadKind, Volume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    /// Linear across the two bracketing frames and bilinear inside each frame
    /// when reconstructing; trilinear in voxel space when projecting.
    #[default]
    Trilinear,
    Nearest,
}

fn check_interp<T: Payload>(interp: Interp) -> Result<()> {
    if interp == Interp::Trilinear && T::KIND == PayloadKind::Label {
        return Err(Error::LabelInterpolation);
    }
    Ok(())
}

/// Resample a frame stack onto a Cartesian grid. Voxels outside the fan get `fill`.
pub fn reconstruct_cartesian<T: Payload>(
    stack: &FrameStack<T>,
    grid: &GridSpec,
    interp: Interp,
    fill: T,
) -> Result<Volume<T>> {
    check_interp::<T>(interp)?;
    grid.validate()?;
    let geom = stack.geometry();
    let order = geom.ascending_order();
    let [nx, ny, _] = grid.dims;
    let mut out = Volume::filled(grid.clone(), fill)?;

    out.data_mut()
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..ny {
                for i in 0..nx {
                    let p = grid.voxel_center(i, j, k);
                    let c = geom.world_to_fan(p);
                    if !c.in_coverage {
                        continue;
                    }
                    let Some(b) = geom.bracket(&order, c.theta_deg) else {
                        continue;
                    };
                    let u = c.axial_mm / geom.pixel_spacing_mm[0];
                    let v = c.depth_mm / geom.pixel_spacing_mm[1];
                    slab[i + nx * j] = match interp {
                        Interp::Trilinear => {
                            let a = stack.sample_bilinear(b.lo, v, u);
                            let z = stack.sample_bilinear(b.hi, v, u);
                            T::from_f64(a * (1.0 - b.t) + z * b.t)
                        }
                        Interp::Nearest => {
                            let f = if b.t <= 0.5 { b.lo } else { b.hi };
                            stack.sample_nearest(f, v, u)
                        }
                    };
                }
            }
        });
    Ok(out)
}

/// Sample a Cartesian volume at every frame pixel's world position.
///
/// Voxels inside the fan are preferred, so the fill value written outside the
/// coverage by [`reconstruct_cartesian`] does not bleed into edge pixels; a
/// pixel whose whole stencil lies outside falls back to plain interpolation.
pub fn project_to_frames<T: Payload>(
    vol: &Volume<T>,
    geom: &FanGeometry,
    interp: Interp,
    fill: T,
) -> Result<FrameStack<T>> {
    check_interp::<T>(interp)?;
    geom.validate()?;
    let grid = vol.grid();
    let valid = coverage_mask(geom, grid)?.into_data();
    let frames: Vec<Vec<T>> = (0..geom.frame_count())
        .into_par_iter()
        .map(|f| {
            let theta = geom.angles_deg[f];
            let mut frame = vec![fill; geom.frame_len()];
            for v in 0..geom.radial_pixels {
                let depth = v as f64 * geom.pixel_spacing_mm[1];
                for u in 0..geom.axial_pixels {
                    let p = geom.fan_to_world(theta, depth, u as f64 * geom.pixel_spacing_mm[0]);
                    let c = grid.to_voxel(p);
                    let sample = match interp {
                        Interp::Trilinear => vol
                            .sample_linear_masked(c, &valid)
                            .or_else(|| vol.sample_linear(c))
                            .map(T::from_f64),
                        Interp::Nearest => vol.sample_nearest_masked(c, &valid).or_else(|| vol.sample_nearest(c)),
                    };
                    if let Some(s) = sample {
                        frame[v * geom.axial_pixels + u] = s;
                    }
                }
            }
            frame
        })
        .collect();
    FrameStack::new(geom.clone(), frames)
}

/// 1 where the grid voxel centre lies inside the fan, else 0.
pub fn coverage_mask(geom: &FanGeometry, grid: &GridSpec) -> Result<Volume<u8>> {
    grid.validate()?;
    let data = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let [i, j, k] = grid.coords(idx);
            u8::from(geom.world_to_fan(grid.voxel_center(i, j, k)).in_coverage)
        })
        .collect();
    Volume::from_data(grid.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_geom() -> FanGeometry {
        FanGeometry::sweep(10.0, 12, 16, [0.5, 0.5], -30.0, 30.0, 25).unwrap()
    }

    #[test]
    fn constant_stack_reconstructs_constant() {
        let g = small_geom();
        let stack = FrameStack::filled(g.clone(), 7.0f32).unwrap();
        let grid = g.covering_grid(Some(0.5)).unwrap();
        let vol = reconstruct_cartesian(&stack, &grid, Interp::Trilinear, 0.0).unwrap();
        let mask = coverage_mask(&g, &grid).unwrap();
        let mut inside = 0;
        for (v, m) in vol.data().iter().zip(mask.data()) {
            if *m == 1 {
                inside += 1;
                assert!((v - 7.0).abs() < 1e-5);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(inside > 0);
    }

    #[test]
    fn custom_fill_value() {
        let g = small_geom();
        let stack = FrameStack::filled(g, 1.0f32).unwrap();
        let far = GridSpec::new([2, 2, 2], [1.0; 3], [-100.0, -100.0, 0.0]).unwrap();
        let vol = reconstruct_cartesian(&stack, &far, Interp::Nearest, -3.0).unwrap();
        assert!(vol.data().iter().all(|&v| v == -3.0));
    }

    #[test]
    fn trilinear_on_labels_is_rejected() {
        let g = small_geom();
        let stack = FrameStack::filled(g.clone(), 1u8).unwrap();
        let grid = g.covering_grid(None).unwrap();
        assert!(matches!(
            reconstruct_cartesian(&stack, &grid, Interp::Trilinear, 0),
            Err(Error::LabelInterpolation)
        ));
        let vol = Volume::filled(grid, 1u8).unwrap();
        assert!(matches!(
            project_to_frames(&vol, &g, Interp::Trilinear, 0),
            Err(Error::LabelInterpolation)
        ));
    }

    #[test]
    fn constant_volume_projects_constant() {
        let g = small_geom();
        let grid = g.covering_grid(Some(0.5)).unwrap();
        let vol = Volume::filled(grid, 4.5f32).unwrap();
        let stack = project_to_frames(&vol, &g, Interp::Trilinear, 0.0).unwrap();
        for f in stack.frames() {
            assert!(f.iter().all(|&v| (v - 4.5).abs() < 1e-6));
        }
    }

    #[test]
    fn coverage_extremes() {
        let g = small_geom();
        let far = GridSpec::new([3, 3, 3], [0.5; 3], [-50.0, 0.0, 0.0]).unwrap();
        assert_eq!(coverage_mask(&g, &far).unwrap().count_nonzero(), 0);
        let inside = GridSpec::new([3, 3, 3], [0.5; 3], [14.0, -0.5, 1.0]).unwrap();
        assert_eq!(coverage_mask(&g, &inside).unwrap().count_nonzero(), 27);
    }
}
