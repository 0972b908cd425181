//! Rank tests against full enumeration of the null distribution.

use medmus_core::stats::{bonferroni, mann_whitney_u, wilcoxon_signed_rank, Alternative, PMethod};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALTS: [Alternative; 3] = [Alternative::TwoSided, Alternative::Greater, Alternative::Less];

fn tails(stats: &[f64], obs: f64, alt: Alternative) -> f64 {
    let total = stats.len() as f64;
    let upper = stats.iter().filter(|&&s| s >= obs).count() as f64 / total;
    let lower = stats.iter().filter(|&&s| s <= obs).count() as f64 / total;
    match alt {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    }
}

/// Every assignment of signs to the ranks `1..=n`.
fn signed_rank_oracle(d: &[f64], alt: Alternative) -> (f64, f64) {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut rank = vec![0.0; d.len()];
    for (r, &i) in idx.iter().enumerate() {
        rank[i] = (r + 1) as f64;
    }
    let obs: f64 = (0..d.len()).filter(|&i| d[i] > 0.0).map(|i| rank[i]).sum();
    let n = d.len();
    let stats: Vec<f64> = (0u32..1 << n)
        .map(|mask| (0..n).filter(|&k| mask >> k & 1 == 1).map(|k| (k + 1) as f64).sum())
        .collect();
    (obs, tails(&stats, obs, alt))
}

/// Every split of the pooled values into groups of sizes `n` and `m`.
fn rank_sum_oracle(x: &[f64], y: &[f64], alt: Alternative) -> (f64, f64) {
    let u_of = |a: &[f64], b: &[f64]| a.iter().map(|p| b.iter().filter(|q| p > q).count()).sum::<usize>() as f64;
    let obs = u_of(x, y);
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let total = pooled.len();
    let mut stats = Vec::new();
    for mask in 0u32..1 << total {
        if mask.count_ones() as usize != x.len() {
            continue;
        }
        let (a, b): (Vec<(usize, f64)>, Vec<(usize, f64)>) =
            pooled.iter().copied().enumerate().partition(|(i, _)| mask >> i & 1 == 1);
        let a: Vec<f64> = a.into_iter().map(|(_, v)| v).collect();
        let b: Vec<f64> = b.into_iter().map(|(_, v)| v).collect();
        stats.push(u_of(&a, &b));
    }
    (obs, tails(&stats, obs, alt))
}

/// Distinct values so no ties arise.
fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut pool: Vec<f64> = (1..=40).map(|k| k as f64 * 0.25).collect();
    pool.shuffle(rng);
    pool.truncate(n);
    pool
}

#[test]
fn wilcoxon_examples() {
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[0.0; 3], Alternative::TwoSided).unwrap();
    assert_eq!(r.p_value, 0.25);
    assert_eq!(r.statistic, 6.0);
    assert_eq!(r.method, PMethod::Exact);
    let r = wilcoxon_signed_rank(&[1.0, 5.0, 5.0], &[1.0, 5.0, 4.0], Alternative::TwoSided).unwrap();
    assert_eq!((r.n, r.p_value), (1, 1.0));
    assert!(wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0], Alternative::TwoSided).is_err());
    assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0], Alternative::TwoSided).is_err());
    assert!(wilcoxon_signed_rank(&[f64::NAN], &[1.0], Alternative::TwoSided).is_err());
}

#[test]
fn wilcoxon_exact_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..200 {
        let n = 1 + case % 10;
        let mags = distinct(&mut rng, n);
        let d: Vec<f64> = mags.iter().map(|&m| if rng.random_bool(0.5) { m } else { -m }).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0f64).round()).collect();
        let a: Vec<f64> = d.iter().zip(&b).map(|(x, y)| x + y).collect();
        // Recover the differences as the test sees them.
        let seen: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        for alt in ALTS {
            let r = wilcoxon_signed_rank(&a, &b, alt).unwrap();
            let (w, p) = signed_rank_oracle(&seen, alt);
            assert_eq!(r.method, PMethod::Exact);
            assert_eq!(r.statistic, w);
            assert_eq!(r.p_value, p, "n={n} {alt:?}");
        }
    }
}

#[test]
fn mann_whitney_examples() {
    let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0], Alternative::Less).unwrap();
    assert_eq!(r.p_value, 1.0 / 6.0);
    assert_eq!(r.statistic, 0.0);
    let r = mann_whitney_u(&[2.0], &[2.0], Alternative::TwoSided).unwrap();
    assert_eq!(r.p_value, 1.0);
    assert_eq!(r.method, PMethod::Normal);
    assert!(mann_whitney_u(&[], &[1.0], Alternative::TwoSided).is_err());
}

#[test]
fn mann_whitney_exact_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for n in 1..10 {
        for m in 1..=10 - n {
            for _ in 0..3 {
                let vals = distinct(&mut rng, n + m);
                let (x, y) = vals.split_at(n);
                for alt in ALTS {
                    let r = mann_whitney_u(x, y, alt).unwrap();
                    let (u, p) = rank_sum_oracle(x, y, alt);
                    assert_eq!(r.method, PMethod::Exact);
                    assert_eq!(r.statistic, u);
                    assert_eq!(r.p_value, p, "n={n} m={m} {alt:?}");
                }
            }
        }
    }
}

#[test]
fn large_or_tied_samples_use_normal_approximation() {
    let a: Vec<f64> = (0..30).map(|i| i as f64 + 0.5).collect();
    let b = vec![0.0; 30];
    let r = wilcoxon_signed_rank(&a, &b, Alternative::Greater).unwrap();
    assert_eq!(r.method, PMethod::Normal);
    // All 30 differences positive: W+ = 465, mean 232.5, var 2363.75.
    let z = (465.0 - 232.5 - 0.5) / 2363.75f64.sqrt();
    assert!(r.p_value < 1e-5 && r.p_value > 0.0);
    assert!(z > 4.7);
    let tied = wilcoxon_signed_rank(&[1.0, 1.0, 2.0], &[0.0; 3], Alternative::TwoSided).unwrap();
    assert_eq!(tied.method, PMethod::Normal);
    let r = mann_whitney_u(&[1.0, 2.0, 2.0], &[2.0, 3.0], Alternative::TwoSided).unwrap();
    assert_eq!(r.method, PMethod::Normal);
    assert_eq!(r.statistic, 1.0);
}

#[test]
fn bonferroni_is_exact_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..100 {
        let ps: Vec<f64> = (0..rng.random_range(1..8)).map(|_| rng.random_range(0.0..=1.0)).collect();
        let m = rng.random_range(1..12usize);
        let adj = bonferroni(&ps, m).unwrap();
        for (p, q) in ps.iter().zip(&adj) {
            assert_eq!(*q, (p * m as f64).min(1.0));
        }
    }
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..20).prop_map(|v| v as f64 * 0.5), 1..30)
}

proptest! {
    #[test]
    fn p_values_are_probabilities_and_two_sided_dominates(a in sample(), shift in -3.0f64..3.0) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + shift * ((i % 3) as f64 - 0.5)).collect();
        if let Ok(two) = wilcoxon_signed_rank(&a, &b, Alternative::TwoSided) {
            let g = wilcoxon_signed_rank(&a, &b, Alternative::Greater).unwrap();
            let l = wilcoxon_signed_rank(&a, &b, Alternative::Less).unwrap();
            for p in [two.p_value, g.p_value, l.p_value] {
                prop_assert!((0.0..=1.0).contains(&p));
            }
            prop_assert!(two.p_value >= g.p_value.min(l.p_value));
        }
        let two = mann_whitney_u(&a, &b, Alternative::TwoSided).unwrap();
        let g = mann_whitney_u(&a, &b, Alternative::Greater).unwrap();
        let l = mann_whitney_u(&a, &b, Alternative::Less).unwrap();
        for p in [two.p_value, g.p_value, l.p_value] {
            prop_assert!((0.0..=1.0).contains(&p));
        }
        prop_assert!(two.p_value >= g.p_value.min(l.p_value));
    }

    #[test]
    fn bonferroni_preserves_order(mut ps in prop::collection::vec(0.0f64..=1.0, 1..20), m in 1usize..50) {
        ps.sort_by(f64::total_cmp);
        let adj = bonferroni(&ps, m).unwrap();
        prop_assert!(adj.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(adj.iter().zip(&ps).all(|(q, p)| q >= p));
    }
}
