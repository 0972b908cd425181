//! Morphological cleanup of binary segmentation masks: closing, connected
//! components and removal of small components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, LabelStack, LabelVolume, Volume};

/// Size threshold, in native pixels, at the reference acquisition resolution.
pub const REFERENCE_MIN_SIZE: usize = 10_000;
/// Native pixel area of the reference acquisition (0.03 mm x 0.03 mm).
pub const REFERENCE_PIXEL_AREA_MM2: f64 = 0.03 * 0.03;
/// Reference pixel area times the 0.3 mm spacing between sweep planes.
pub const REFERENCE_VOXEL_VOLUME_MM3: f64 = REFERENCE_PIXEL_AREA_MM2 * 0.3;

/// Minimum component size at another voxel size, keeping the physical volume
/// of the reference threshold.
pub fn scaled_min_voxels(voxel_volume_mm3: f64) -> usize {
    (REFERENCE_MIN_SIZE as f64 * REFERENCE_VOXEL_VOLUME_MM3 / voxel_volume_mm3).round() as usize
}

/// Per-frame analogue of [`scaled_min_voxels`] based on pixel area.
pub fn scaled_min_pixels(pixel_area_mm2: f64) -> usize {
    (REFERENCE_MIN_SIZE as f64 * REFERENCE_PIXEL_AREA_MM2 / pixel_area_mm2).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::Config(format!("connectivity must be 6 or 26, got {n}"))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

/// Component labelling of a binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledComponents {
    grid: GridSpec,
    ids: Vec<u32>,
    counts: Vec<usize>,
    connectivity: Connectivity,
}

impl LabeledComponents {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Component id per voxel, 0 for background, ids `1..=len()` numbered in
    /// order of first appearance along the x-fastest scan.
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Voxel count of component `id` at index `id - 1`.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    /// Linear voxel indices of every component.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.counts.iter().map(|&c| Vec::with_capacity(c)).collect();
        for (idx, &id) in self.ids.iter().enumerate() {
            if id != 0 {
                out[id as usize - 1].push(idx);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocConfig {
    /// Edge length of the cubic closing element; 1 disables closing.
    pub kernel: usize,
    pub connectivity: Connectivity,
    pub min_voxels: usize,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig {
            kernel: 3,
            connectivity: Connectivity::TwentySix,
            min_voxels: REFERENCE_MIN_SIZE,
        }
    }
}

impl PostprocConfig {
    /// Defaults with the size threshold rescaled to the given voxel volume.
    pub fn for_voxel_volume(voxel_volume_mm3: f64) -> Self {
        PostprocConfig {
            min_voxels: scaled_min_voxels(voxel_volume_mm3),
            ..Default::default()
        }
    }
}

fn check_binary(data: &[u8]) -> Result<()> {
    match data.iter().find(|&&v| v > 1) {
        Some(v) => Err(Error::Input(format!("mask is not binary (found label {v})"))),
        None => Ok(()),
    }
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Config(format!(
            "closing kernel must be a positive odd size, got {kernel}"
        )));
    }
    Ok(())
}

/// Running max (`dilate`) or min along one axis over a window of half-width
/// `r`, clipped at the grid edge.
fn line_pass(data: &mut [u8], dims: [usize; 3], axis: usize, r: usize, dilate: bool) {
    if r == 0 || dims[axis] == 1 {
        return;
    }
    let n = dims[axis];
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut line = vec![0u8; n];
    let lines = data.len() / n;
    for l in 0..lines {
        let base = match axis {
            0 => l * n,
            1 => (l / dims[0]) * dims[0] * dims[1] + l % dims[0],
            _ => l,
        };
        for (i, v) in line.iter_mut().enumerate() {
            *v = data[base + i * stride];
        }
        for i in 0..n {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            let w = &line[lo..=hi];
            data[base + i * stride] = if dilate {
                *w.iter().max().unwrap()
            } else {
                *w.iter().min().unwrap()
            };
        }
    }
}

fn close_raw(data: &mut [u8], dims: [usize; 3], radius: [usize; 3]) {
    for axis in 0..3 {
        line_pass(data, dims, axis, radius[axis], true);
    }
    for axis in 0..3 {
        line_pass(data, dims, axis, radius[axis], false);
    }
}

/// Binary closing with a `kernel`-wide cube: dilation treating the outside as
/// background, then erosion over the in-grid part of each window.
pub fn closing(mask: &LabelVolume, kernel: usize) -> Result<LabelVolume> {
    check_binary(mask.data())?;
    check_kernel(kernel)?;
    let r = kernel / 2;
    let mut data = mask.data().to_vec();
    close_raw(&mut data, mask.dims(), [r; 3]);
    Volume::from_data(mask.grid().clone(), data)
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Neighbour offsets preceding a voxel in scan order.
fn backward_offsets(conn: Connectivity) -> Vec<[isize; 3]> {
    let mut out = Vec::new();
    for dz in -1isize..=0 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if (dz, dy, dx) >= (0, 0, 0) {
                    continue;
                }
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                if conn == Connectivity::Six && manhattan != 1 {
                    continue;
                }
                out.push([dx, dy, dz]);
            }
        }
    }
    out
}

pub(crate) fn label_raw(data: &[u8], dims: [usize; 3], conn: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let [nx, ny, nz] = dims;
    let offsets = backward_offsets(conn);
    let mut uf = UnionFind {
        parent: (0..data.len() as u32).collect(),
    };
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = x + nx * (y + ny * z);
                if data[idx] == 0 {
                    continue;
                }
                for &[dx, dy, dz] in &offsets {
                    let (qx, qy, qz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize {
                        continue;
                    }
                    let q = qx as usize + nx * (qy as usize + ny * qz as usize);
                    if data[q] != 0 {
                        uf.union(idx as u32, q as u32);
                    }
                }
            }
        }
    }
    let mut dense = vec![0u32; data.len()];
    let mut ids = vec![0u32; data.len()];
    let mut counts = Vec::new();
    for idx in 0..data.len() {
        if data[idx] == 0 {
            continue;
        }
        let root = uf.find(idx as u32) as usize;
        if dense[root] == 0 {
            counts.push(0);
            dense[root] = counts.len() as u32;
        }
        let id = dense[root];
        ids[idx] = id;
        counts[id as usize - 1] += 1;
    }
    (ids, counts)
}

/// Labels every maximal connected set of foreground voxels.
pub fn connected_components(mask: &LabelVolume, connectivity: Connectivity) -> Result<LabeledComponents> {
    check_binary(mask.data())?;
    let (ids, counts) = label_raw(mask.data(), mask.dims(), connectivity);
    Ok(LabeledComponents {
        grid: mask.grid().clone(),
        ids,
        counts,
        connectivity,
    })
}

/// Binary mask of the components with at least `min_voxels` voxels.
pub fn filter_small(components: &LabeledComponents, min_voxels: usize) -> LabelVolume {
    let keep: Vec<bool> = components.counts.iter().map(|&c| c >= min_voxels).collect();
    let data = components
        .ids
        .iter()
        .map(|&id| u8::from(id != 0 && keep[id as usize - 1]))
        .collect();
    Volume::from_data(components.grid.clone(), data).expect("grid of a labelled volume")
}

/// Closing, component labelling and size filtering in sequence.
pub fn postprocess(mask: &LabelVolume, cfg: &PostprocConfig) -> Result<LabelVolume> {
    let closed = closing(mask, cfg.kernel)?;
    let cc = connected_components(&closed, cfg.connectivity)?;
    Ok(filter_small(&cc, cfg.min_voxels))
}

/// Frame-by-frame variant on the native acquisition planes: square closing and
/// 8-connected components within each frame, `min_pixels` per frame.
pub fn postprocess_frames(mask: &LabelStack, kernel: usize, min_pixels: usize) -> Result<LabelStack> {
    check_kernel(kernel)?;
    let g = mask.geometry();
    // A frame is stored depth-major with the axial coordinate fastest.
    let dims = [g.axial_pixels, g.radial_pixels, 1];
    let r = kernel / 2;
    let mut out = mask.clone();
    for frame in out.frames_mut() {
        check_binary(frame)?;
        close_raw(frame, dims, [r, r, 0]);
        let (ids, counts) = label_raw(frame, dims, Connectivity::TwentySix);
        for (v, &id) in frame.iter_mut().zip(&ids) {
            *v = u8::from(id != 0 && counts[id as usize - 1] >= min_pixels);
        }
    }
    Ok(out)
}
