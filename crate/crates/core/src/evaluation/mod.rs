//! Overlap, lesion-level, sector-level and patient-level detection metrics.
//!
//! Every operation works on a [`LabelGrid`]: either a Cartesian label volume or
//! a stack of native frames, where the frame index acts as the third grid axis
//! for connectivity. Any non-zero label counts as foreground.

mod lesions;
mod metrics;
mod report;
mod sectors;

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::geometry::{LabelStack, LabelVolume};

pub use lesions::{match_lesions, Lesion, LesionMatch, LesionSet, LesionSource, MatchOptions, OverlapMode};
pub use metrics::{metrics, ConfusionCounts, Level, MetricsReport};
pub use report::{evaluate_case, evaluate_cohort, CaseReport, CohortReport, CohortSummary, EvalOptions, MeanMetrics};
pub use sectors::{sector_confusion, sector_partition, SectorMap};

/// Sampled label data with a regular index grid and a position for each sample.
pub trait LabelGrid {
    /// Grid extent with the first axis fastest in [`labels`](Self::labels).
    fn index_dims(&self) -> [usize; 3];

    fn labels(&self) -> Cow<'_, [u8]>;

    /// Number of slabs along the probe axis.
    fn slab_count(&self) -> usize;

    /// Probe-axis slab holding sample `idx`.
    fn slab_of(&self, idx: usize) -> usize;

    /// Position of sample `idx` in the plane orthogonal to the probe axis, mm.
    fn plane_xy(&self, idx: usize) -> [f64; 2];

    fn same_layout(&self, other: &Self) -> bool;
}

impl LabelGrid for LabelVolume {
    fn index_dims(&self) -> [usize; 3] {
        self.dims()
    }

    fn labels(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(self.data())
    }

    fn slab_count(&self) -> usize {
        self.dims()[2]
    }

    fn slab_of(&self, idx: usize) -> usize {
        self.grid().coords(idx)[2]
    }

    fn plane_xy(&self, idx: usize) -> [f64; 2] {
        let [i, j, k] = self.grid().coords(idx);
        let c = self.grid().voxel_center(i, j, k);
        [c[0], c[1]]
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.same_grid(other)
    }
}

/// Frames are laid out frame-major with the axial pixel fastest, so the grid
/// is `[axial, radial, frame]` and axial columns are the probe-axis slabs.
impl LabelGrid for LabelStack {
    fn index_dims(&self) -> [usize; 3] {
        let g = self.geometry();
        [g.axial_pixels, g.radial_pixels, g.frame_count()]
    }

    fn labels(&self) -> Cow<'_, [u8]> {
        Cow::Owned(self.flatten())
    }

    fn slab_count(&self) -> usize {
        self.geometry().axial_pixels
    }

    fn slab_of(&self, idx: usize) -> usize {
        idx % self.geometry().axial_pixels
    }

    fn plane_xy(&self, idx: usize) -> [f64; 2] {
        let g = self.geometry();
        let v = (idx / g.axial_pixels) % g.radial_pixels;
        let f = idx / g.frame_len();
        let p = g.fan_to_world(g.angles_deg[f], v as f64 * g.pixel_spacing_mm[1], 0.0);
        [p[0], p[1]]
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.geometry() == other.geometry()
    }
}

pub(crate) fn check_layout<G: LabelGrid>(op: &'static str, a: &G, b: &G) -> Result<()> {
    if a.same_layout(b) {
        Ok(())
    } else {
        Err(Error::shape(op, "inputs are sampled on different grids"))
    }
}

/// Dice similarity coefficient; `None` when both masks are empty.
pub fn dsc<G: LabelGrid>(pred: &G, gt: &G) -> Result<Option<f64>> {
    check_layout("dsc", pred, gt)?;
    let (p, g) = (pred.labels(), gt.labels());
    let (mut np, mut ng, mut both) = (0u64, 0u64, 0u64);
    for (&a, &b) in p.iter().zip(g.iter()) {
        let (a, b) = (a != 0, b != 0);
        np += a as u64;
        ng += b as u64;
        both += (a && b) as u64;
    }
    if np + ng == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * both as f64 / (np + ng) as f64))
}

/// `(predicted positive, ground-truth positive)` for one case.
pub fn patient_level<G: LabelGrid>(pred: &G, gt: &G) -> Result<(bool, bool)> {
    check_layout("patient_level", pred, gt)?;
    let any = |g: &G| g.labels().iter().any(|&v| v != 0);
    Ok((any(pred), any(gt)))
}
