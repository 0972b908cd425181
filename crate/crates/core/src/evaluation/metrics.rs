use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Lesion,
    Sector,
    Patient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub level: Level,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn zero(level: Level) -> Self {
        ConfusionCounts {
            level,
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Element-wise sum; the level of `self` is kept.
    pub fn add(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            level: self.level,
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

/// Rates derived from a confusion table. Ratios with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub f1: Option<f64>,
    pub dsc: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(counts: ConfusionCounts, dsc: Option<f64>) -> MetricsReport {
    let c = counts;
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let ppv = ratio(c.tp, c.tp + c.fp);
    let f1 = match (ppv, sensitivity) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        _ => None,
    };
    MetricsReport {
        counts,
        sensitivity,
        specificity: ratio(c.tn, c.tn + c.fp),
        accuracy: ratio(c.tp + c.tn, c.total()),
        ppv,
        npv: ratio(c.tn, c.tn + c.fn_),
        f1,
        dsc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts {
            level: Level::Lesion,
            tp,
            fp,
            fn_,
            tn,
        }
    }

    #[test]
    fn sensitivity_example() {
        assert_eq!(metrics(counts(3, 0, 1, 0), None).sensitivity, Some(0.75));
    }

    #[test]
    fn degenerate_counts_are_absent() {
        let m = metrics(counts(0, 0, 0, 0), None);
        assert!(m.sensitivity.is_none() && m.specificity.is_none() && m.accuracy.is_none());
        assert!(m.ppv.is_none() && m.npv.is_none() && m.f1.is_none());
    }

    #[test]
    fn counts_serialize_with_fn_key() {
        let s = serde_json::to_string(&counts(1, 2, 3, 4)).unwrap();
        assert!(s.contains("\"fn\":3"), "{s}");
    }
}
