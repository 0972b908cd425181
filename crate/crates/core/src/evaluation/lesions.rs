use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionCounts, Level};
use super::LabelGrid;
use crate::error::{Error, Result};
use crate::postproc::{label_raw, Connectivity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionSource {
    GroundTruth,
    Prediction,
}

/// One connected lesion, as linear sample indices in increasing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lesion {
    pub id: u32,
    pub voxels: Vec<usize>,
}

impl Lesion {
    pub fn size(&self) -> usize {
        self.voxels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesionSet {
    dims: [usize; 3],
    lesions: Vec<Lesion>,
    source: LesionSource,
}

impl LesionSet {
    /// Connected components of the non-zero samples, one lesion each.
    pub fn from_mask<G: LabelGrid>(mask: &G, connectivity: Connectivity, source: LesionSource) -> Self {
        let dims = mask.index_dims();
        let fg: Vec<u8> = mask.labels().iter().map(|&v| u8::from(v != 0)).collect();
        let (ids, counts) = label_raw(&fg, dims, connectivity);
        let mut lesions: Vec<Lesion> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| Lesion {
                id: i as u32 + 1,
                voxels: Vec::with_capacity(c),
            })
            .collect();
        for (idx, &id) in ids.iter().enumerate() {
            if id != 0 {
                lesions[id as usize - 1].voxels.push(idx);
            }
        }
        LesionSet { dims, lesions, source }
    }

    /// Lesions given explicitly; they must be non-empty, in range and pairwise disjoint.
    pub fn new(dims: [usize; 3], voxel_sets: Vec<Vec<usize>>, source: LesionSource) -> Result<Self> {
        let n: usize = dims.iter().product();
        let mut owner = vec![false; n];
        let mut lesions = Vec::with_capacity(voxel_sets.len());
        for (i, mut voxels) in voxel_sets.into_iter().enumerate() {
            voxels.sort_unstable();
            voxels.dedup();
            if voxels.is_empty() {
                return Err(Error::Input(format!("lesion {} is empty", i + 1)));
            }
            for &v in &voxels {
                if v >= n {
                    return Err(Error::Input(format!("lesion {} has sample {v} outside the grid", i + 1)));
                }
                if std::mem::replace(&mut owner[v], true) {
                    return Err(Error::Input(format!("lesions overlap at sample {v}")));
                }
            }
            lesions.push(Lesion {
                id: i as u32 + 1,
                voxels,
            });
        }
        Ok(LesionSet { dims, lesions, source })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn lesions(&self) -> &[Lesion] {
        &self.lesions
    }

    pub fn len(&self) -> usize {
        self.lesions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lesions.is_empty()
    }

    pub fn source(&self) -> LesionSource {
        self.source
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// `|pred ∩ gt| / |gt|`.
    #[default]
    GtFraction,
    /// `|pred ∩ gt| / |pred ∪ gt|`.
    Iou,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    /// A pair matches when its overlap is strictly greater than this.
    pub threshold: f64,
    pub mode: OverlapMode,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            threshold: 0.2,
            mode: OverlapMode::GtFraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionMatch {
    /// TP and FN count ground-truth lesions, FP counts predicted lesions; TN is 0.
    pub counts: ConfusionCounts,
    /// Per ground-truth lesion, the largest overlap with any prediction.
    pub best_overlap: Vec<f64>,
    /// Per ground-truth lesion, the prediction achieving `best_overlap` when it
    /// exceeds the threshold (lowest index on ties).
    pub detected_by: Vec<Option<usize>>,
    /// Per predicted lesion, whether it matches no ground-truth lesion.
    pub false_positive: Vec<bool>,
}

/// Lesion-level detection: a ground-truth lesion is found when some predicted
/// lesion overlaps it by more than the threshold.
pub fn match_lesions(pred: &LesionSet, gt: &LesionSet, opts: &MatchOptions) -> Result<LesionMatch> {
    if pred.dims != gt.dims {
        return Err(Error::shape(
            "match_lesions",
            format!("grids {:?} and {:?} differ", pred.dims, gt.dims),
        ));
    }
    if !(0.0..1.0).contains(&opts.threshold) {
        return Err(Error::Config(format!(
            "overlap threshold must lie in [0, 1), got {}",
            opts.threshold
        )));
    }
    let n: usize = gt.dims.iter().product();
    let mut owner = vec![u32::MAX; n];
    for (gi, l) in gt.lesions.iter().enumerate() {
        for &v in &l.voxels {
            owner[v] = gi as u32;
        }
    }
    let mut best_overlap = vec![0.0f64; gt.len()];
    let mut detected_by = vec![None; gt.len()];
    let mut false_positive = vec![true; pred.len()];
    for (pi, p) in pred.lesions.iter().enumerate() {
        let mut inter: BTreeMap<u32, usize> = BTreeMap::new();
        for &v in &p.voxels {
            if owner[v] != u32::MAX {
                *inter.entry(owner[v]).or_default() += 1;
            }
        }
        for (&gi, &both) in &inter {
            let gi = gi as usize;
            let g = gt.lesions[gi].size();
            let overlap = match opts.mode {
                OverlapMode::GtFraction => both as f64 / g as f64,
                OverlapMode::Iou => both as f64 / (p.size() + g - both) as f64,
            };
            if overlap > opts.threshold {
                false_positive[pi] = false;
                if overlap > best_overlap[gi] {
                    detected_by[gi] = Some(pi);
                }
            }
            if overlap > best_overlap[gi] {
                best_overlap[gi] = overlap;
            }
        }
    }
    let tp = detected_by.iter().filter(|d| d.is_some()).count() as u64;
    let counts = ConfusionCounts {
        level: Level::Lesion,
        tp,
        fn_: gt.len() as u64 - tp,
        fp: false_positive.iter().filter(|&&f| f).count() as u64,
        tn: 0,
    };
    Ok(LesionMatch {
        counts,
        best_overlap,
        detected_by,
        false_positive,
    })
}
