use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionCounts, Level};
use super::{check_layout, LabelGrid};
use crate::error::{Error, Result};

/// Partition of a prostate mask into `thirds` longitudinal parts, each split
/// into `sectors` equal angular bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorMap {
    dims: [usize; 3],
    sectors: usize,
    thirds: usize,
    /// Region per sample: 0 outside the prostate, else `third * sectors + sector + 1`.
    regions: Vec<u32>,
    counts: Vec<usize>,
    /// First slab of each third along the probe axis.
    third_starts: Vec<usize>,
}

impl SectorMap {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn sectors(&self) -> usize {
        self.sectors
    }

    pub fn thirds(&self) -> usize {
        self.thirds
    }

    pub fn region_count(&self) -> usize {
        self.sectors * self.thirds
    }

    pub fn regions(&self) -> &[u32] {
        &self.regions
    }

    /// Sample count of region `r` at index `r - 1`.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn third_starts(&self) -> &[usize] {
        &self.third_starts
    }
}

/// Slab cuts that split `per_slab` into `parts` runs of near-equal total.
/// Each cut is the slab boundary whose cumulative count is closest to its
/// target, the lower boundary on ties.
fn equal_count_cuts(per_slab: &[usize], parts: usize) -> Vec<usize> {
    let total: usize = per_slab.iter().sum();
    let mut cum = Vec::with_capacity(per_slab.len() + 1);
    cum.push(0usize);
    for &c in per_slab {
        cum.push(cum.last().unwrap() + c);
    }
    let mut starts = vec![0usize];
    for t in 1..parts {
        let target = (total * t) as f64 / parts as f64;
        let mut best = 0;
        for s in 1..cum.len() {
            if (cum[s] as f64 - target).abs() < (cum[best] as f64 - target).abs() {
                best = s;
            }
        }
        starts.push(best.max(*starts.last().unwrap()));
    }
    starts
}

pub fn sector_partition<G: LabelGrid>(prostate: &G, sectors: usize, thirds: usize) -> Result<SectorMap> {
    if sectors == 0 || thirds == 0 {
        return Err(Error::Config(format!(
            "sector map needs at least one sector and one third, got {sectors} x {thirds}"
        )));
    }
    let mask = prostate.labels();
    let inside: Vec<usize> = (0..mask.len()).filter(|&i| mask[i] != 0).collect();
    if inside.is_empty() {
        return Err(Error::Input("prostate mask is empty".into()));
    }
    let mut per_slab = vec![0usize; prostate.slab_count()];
    for &i in &inside {
        per_slab[prostate.slab_of(i)] += 1;
    }
    let starts = equal_count_cuts(&per_slab, thirds);
    let third_of = |slab: usize| starts.iter().rposition(|&s| s <= slab).unwrap();

    let mut sums = vec![[0.0f64; 2]; thirds];
    let mut members = vec![0usize; thirds];
    let placed: Vec<(usize, usize, [f64; 2])> = inside
        .iter()
        .map(|&i| (i, third_of(prostate.slab_of(i)), prostate.plane_xy(i)))
        .collect();
    for &(_, t, xy) in &placed {
        sums[t][0] += xy[0];
        sums[t][1] += xy[1];
        members[t] += 1;
    }
    let centroids: Vec<[f64; 2]> = sums
        .iter()
        .zip(&members)
        .map(|(s, &m)| if m == 0 { [0.0; 2] } else { [s[0] / m as f64, s[1] / m as f64] })
        .collect();

    let mut regions = vec![0u32; mask.len()];
    let mut counts = vec![0usize; sectors * thirds];
    for (i, t, xy) in placed {
        let c = centroids[t];
        let angle = (xy[1] - c[1]).atan2(xy[0] - c[0]);
        let bin = (((angle + PI) / (2.0 * PI)) * sectors as f64).floor() as usize;
        let r = t * sectors + bin.min(sectors - 1);
        regions[i] = r as u32 + 1;
        counts[r] += 1;
    }
    Ok(SectorMap {
        dims: prostate.index_dims(),
        sectors,
        thirds,
        regions,
        counts,
        third_starts: starts,
    })
}

/// Sector-level confusion: a region is positive when it holds at least
/// `min_voxels` foreground samples of the respective mask.
pub fn sector_confusion<G: LabelGrid>(pred: &G, gt: &G, map: &SectorMap, min_voxels: usize) -> Result<ConfusionCounts> {
    check_layout("sector_confusion", pred, gt)?;
    if pred.index_dims() != map.dims {
        return Err(Error::shape(
            "sector_confusion",
            format!("masks {:?} and sector map {:?} differ", pred.index_dims(), map.dims),
        ));
    }
    let min_voxels = min_voxels.max(1);
    let n = map.region_count();
    let mut hits_pred = vec![0usize; n];
    let mut hits_gt = vec![0usize; n];
    let (p, g) = (pred.labels(), gt.labels());
    for (i, &r) in map.regions.iter().enumerate() {
        if r == 0 {
            continue;
        }
        let r = r as usize - 1;
        hits_pred[r] += (p[i] != 0) as usize;
        hits_gt[r] += (g[i] != 0) as usize;
    }
    let mut c = ConfusionCounts::zero(Level::Sector);
    for r in 0..n {
        match (hits_pred[r] >= min_voxels, hits_gt[r] >= min_voxels) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuts_balance_counts() {
        assert_eq!(equal_count_cuts(&[1; 9], 3), vec![0, 3, 6]);
        assert_eq!(equal_count_cuts(&[1; 10], 3), vec![0, 3, 7]);
        assert_eq!(equal_count_cuts(&[10, 0, 0], 3), vec![0, 0, 1]);
    }
}
