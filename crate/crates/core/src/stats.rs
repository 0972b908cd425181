//! Rank-based hypothesis tests and Bonferroni correction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest effective sample size for the exact signed-rank distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 25;
/// Largest combined size for the exact rank-sum distribution.
pub const MANN_WHITNEY_EXACT_MAX_N: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// The first sample tends to be larger.
    Greater,
    /// The first sample tends to be smaller.
    Less,
}

impl std::str::FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            _ => Err(Error::Config(format!(
                "alternative must be two-sided, greater or less, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    /// Normal approximation with tie and continuity corrections.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// `W+` (sum of ranks of positive differences) or `U` of the first sample.
    pub statistic: f64,
    pub p_value: f64,
    pub method: PMethod,
    /// Sample size after dropping zero differences (signed-rank), or `n + m`.
    pub n: usize,
}

/// Mid-ranks (1-based) of `values` and the tie-group sizes.
fn mid_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("{name} contains non-finite values")));
    }
    Ok(())
}

/// One- or two-sided tail probabilities from an exact null distribution given
/// as counts per integer statistic value.
fn exact_p(counts: &[f64], total: f64, obs: usize, alt: Alternative) -> f64 {
    let upper: f64 = counts[obs..].iter().sum::<f64>() / total;
    let lower: f64 = counts[..=obs].iter().sum::<f64>() / total;
    match alt {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    }
}

fn normal_p(stat: f64, mean: f64, var: f64, alt: Alternative) -> f64 {
    if var <= 0.0 {
        return 1.0;
    }
    let sd = var.sqrt();
    let n = Normal::standard();
    let p = match alt {
        Alternative::Greater => n.sf((stat - mean - 0.5) / sd),
        Alternative::Less => n.cdf((stat - mean + 0.5) / sd),
        Alternative::TwoSided => 2.0 * n.sf(((stat - mean).abs() - 0.5).max(0.0) / sd),
    };
    p.clamp(0.0, 1.0)
}

/// Paired signed-rank test on `a - b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alt: Alternative) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    check_finite("first sample", a)?;
    check_finite("second sample", b)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Err(Error::Input("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = mid_ranks(&abs);
    let w: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    if n <= WILCOXON_EXACT_MAX_N && ties.is_empty() {
        // counts[s] = number of subsets of {1..n} with sum s.
        let max = n * (n + 1) / 2;
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        for k in 1..=n {
            for s in (k..=max).rev() {
                counts[s] += counts[s - k];
            }
        }
        let p = exact_p(&counts, 2f64.powi(n as i32), w as usize, alt);
        return Ok(TestResult {
            statistic: w,
            p_value: p,
            method: PMethod::Exact,
            n,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    Ok(TestResult {
        statistic: w,
        p_value: normal_p(w, mean, var, alt),
        method: PMethod::Normal,
        n,
    })
}

/// Unpaired rank-sum test; the statistic counts pairs with `x > y`, ties as one half.
pub fn mann_whitney_u(x: &[f64], y: &[f64], alt: Alternative) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Input("both samples must be non-empty".into()));
    }
    check_finite("first sample", x)?;
    check_finite("second sample", y)?;
    let (n, m) = (x.len(), y.len());
    let all: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = mid_ranks(&all);
    let rx: f64 = ranks[..n].iter().sum();
    let u = rx - (n * (n + 1)) as f64 / 2.0;
    if n + m <= MANN_WHITNEY_EXACT_MAX_N && ties.is_empty() {
        // f[i][j][u]: arrangements of i first-sample and j second-sample values with statistic u.
        let umax = n * m;
        let mut f = vec![vec![vec![0.0f64; umax + 1]; m + 1]; n + 1];
        for row in f.iter_mut() {
            row[0][0] = 1.0;
        }
        for j in 0..=m {
            f[0][j][0] = 1.0;
        }
        for i in 1..=n {
            for j in 1..=m {
                for s in 0..=i * j {
                    // The largest value belongs to the first sample (beats all j) or the second.
                    let a = if s >= j { f[i - 1][j][s - j] } else { 0.0 };
                    f[i][j][s] = a + f[i][j - 1][s];
                }
            }
        }
        let total: f64 = f[n][m].iter().sum();
        let p = exact_p(&f[n][m], total, u as usize, alt);
        return Ok(TestResult {
            statistic: u,
            p_value: p,
            method: PMethod::Exact,
            n: n + m,
        });
    }
    let (nf, mf) = (n as f64, m as f64);
    let big_n = nf + mf;
    let tie_sum: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nf * mf / 12.0 * ((big_n + 1.0) - tie_sum / (big_n * (big_n - 1.0)));
    Ok(TestResult {
        statistic: u,
        p_value: normal_p(u, nf * mf / 2.0, var, alt),
        method: PMethod::Normal,
        n: n + m,
    })
}

/// `min(1, p * m)` for each p-value.
pub fn bonferroni(p_values: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::Config("number of comparisons must be positive".into()));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Input(format!("p-value {p} outside [0, 1]")));
    }
    Ok(p_values.iter().map(|p| (p * m as f64).min(1.0)).collect())
}
