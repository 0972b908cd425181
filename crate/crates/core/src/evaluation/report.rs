use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lesions::{match_lesions, LesionSet, LesionSource, MatchOptions};
use super::metrics::{metrics, ConfusionCounts, Level, MetricsReport};
use super::sectors::{sector_confusion, sector_partition};
use super::{dsc, patient_level, LabelGrid};
use crate::error::Result;
use crate::postproc::Connectivity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub sectors: usize,
    pub thirds: usize,
    pub matching: MatchOptions,
    pub connectivity: Connectivity,
    /// Foreground samples needed for a sector to count as positive.
    pub sector_min_voxels: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            sectors: 13,
            thirds: 3,
            matching: MatchOptions::default(),
            connectivity: Connectivity::TwentySix,
            sector_min_voxels: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: String,
    pub dsc: Option<f64>,
    pub gt_lesions: usize,
    pub pred_lesions: usize,
    /// Lesion matching alone: FP counts unmatched predicted lesions.
    pub matching: ConfusionCounts,
    pub sector: ConfusionCounts,
    /// TP and FN from lesion matching, FP and TN from the sector map.
    pub lesion: MetricsReport,
    pub patient_pred: bool,
    pub patient_gt: bool,
}

pub fn evaluate_case<G: LabelGrid>(case: &str, pred: &G, gt: &G, prostate: &G, opts: &EvalOptions) -> Result<CaseReport> {
    let dsc = dsc(pred, gt)?;
    let (patient_pred, patient_gt) = patient_level(pred, gt)?;
    let pl = LesionSet::from_mask(pred, opts.connectivity, LesionSource::Prediction);
    let gl = LesionSet::from_mask(gt, opts.connectivity, LesionSource::GroundTruth);
    let matched = match_lesions(&pl, &gl, &opts.matching)?;
    let map = sector_partition(prostate, opts.sectors, opts.thirds)?;
    let sector = sector_confusion(pred, gt, &map, opts.sector_min_voxels)?;
    let combined = ConfusionCounts {
        level: Level::Lesion,
        tp: matched.counts.tp,
        fn_: matched.counts.fn_,
        fp: sector.fp,
        tn: sector.tn,
    };
    Ok(CaseReport {
        case: case.to_string(),
        dsc,
        gt_lesions: gl.len(),
        pred_lesions: pl.len(),
        matching: matched.counts,
        sector,
        lesion: metrics(combined, dsc),
        patient_pred,
        patient_gt,
    })
}

/// Per-case metrics averaged over the cases where each is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub f1: Option<f64>,
    pub dsc: Option<f64>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub cases: usize,
    /// Counts summed over cases before taking ratios; DSC is the case mean.
    pub pooled_lesion: MetricsReport,
    pub pooled_sector: MetricsReport,
    pub mean_lesion: MeanMetrics,
    pub patient: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub cases: Vec<CaseReport>,
    pub summary: CohortSummary,
}

impl CohortReport {
    pub fn from_cases(cases: Vec<CaseReport>) -> Self {
        let mut lesion = ConfusionCounts::zero(Level::Lesion);
        let mut sector = ConfusionCounts::zero(Level::Sector);
        let mut patient = ConfusionCounts::zero(Level::Patient);
        for c in &cases {
            lesion = lesion.add(&c.lesion.counts);
            sector = sector.add(&c.sector);
            match (c.patient_pred, c.patient_gt) {
                (true, true) => patient.tp += 1,
                (true, false) => patient.fp += 1,
                (false, true) => patient.fn_ += 1,
                (false, false) => patient.tn += 1,
            }
        }
        let mean_dsc = mean_defined(cases.iter().map(|c| c.dsc));
        let mean = |f: fn(&MetricsReport) -> Option<f64>| mean_defined(cases.iter().map(|c| f(&c.lesion)));
        let summary = CohortSummary {
            cases: cases.len(),
            pooled_lesion: metrics(lesion, mean_dsc),
            pooled_sector: metrics(sector, None),
            mean_lesion: MeanMetrics {
                sensitivity: mean(|m| m.sensitivity),
                specificity: mean(|m| m.specificity),
                accuracy: mean(|m| m.accuracy),
                ppv: mean(|m| m.ppv),
                npv: mean(|m| m.npv),
                f1: mean(|m| m.f1),
                dsc: mean_dsc,
            },
            patient: metrics(patient, None),
        };
        CohortReport { cases, summary }
    }

    /// One row per case followed by `pooled`, `mean` and `patient` rows.
    /// Undefined values are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "case,dsc,gt_lesions,pred_lesions,tp,fn,fp,tn,unmatched_pred,\
             sensitivity,specificity,accuracy,ppv,npv,f1,patient_pred,patient_gt\n",
        );
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let rates = |m: &MetricsReport| {
            [m.sensitivity, m.specificity, m.accuracy, m.ppv, m.npv, m.f1]
                .map(f)
                .join(",")
        };
        let counts = |c: &ConfusionCounts| format!("{},{},{},{}", c.tp, c.fn_, c.fp, c.tn);
        for c in &self.cases {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.case,
                f(c.dsc),
                c.gt_lesions,
                c.pred_lesions,
                counts(&c.lesion.counts),
                c.matching.fp,
                rates(&c.lesion),
                u8::from(c.patient_pred),
                u8::from(c.patient_gt),
            );
        }
        let s = &self.summary;
        let gt: usize = self.cases.iter().map(|c| c.gt_lesions).sum();
        let pred: usize = self.cases.iter().map(|c| c.pred_lesions).sum();
        let unmatched: u64 = self.cases.iter().map(|c| c.matching.fp).sum();
        let _ = writeln!(
            out,
            "pooled,{},{gt},{pred},{},{unmatched},{},,",
            f(s.pooled_lesion.dsc),
            counts(&s.pooled_lesion.counts),
            rates(&s.pooled_lesion),
        );
        let m = &s.mean_lesion;
        let _ = writeln!(
            out,
            "mean,{},,,,,,,,{},,",
            f(m.dsc),
            [m.sensitivity, m.specificity, m.accuracy, m.ppv, m.npv, m.f1]
                .map(f)
                .join(","),
        );
        let _ = writeln!(
            out,
            "patient,,,,{},,{},,",
            counts(&s.patient.counts),
            rates(&s.patient),
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluates `(name, prediction, ground truth, prostate)` cases in parallel;
/// results keep the input order.
pub fn evaluate_cohort<G: LabelGrid + Sync>(cases: &[(&str, &G, &G, &G)], opts: &EvalOptions) -> Result<CohortReport> {
    let reports = cases
        .par_iter()
        .map(|(name, pred, gt, prostate)| evaluate_case(name, *pred, *gt, *prostate, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(CohortReport::from_cases(reports))
}
