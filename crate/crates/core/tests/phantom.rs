//! Synthetic acquisitions: determinism, label fidelity and analytic volumes.

use medmus_core::geometry::io::{read_stack, write_stack};
use medmus_core::phantom::{generate, output_grid, Ellipsoid, PhantomConfig};
use proptest::prelude::*;

fn count(data: &[u8]) -> usize {
    data.iter().filter(|&&v| v != 0).count()
}

#[test]
fn same_seed_is_bit_identical() {
    let cfg = PhantomConfig {
        seed: 9,
        shadows: 2,
        ..Default::default()
    };
    let a = generate(&cfg).unwrap();
    let b = generate(&cfg).unwrap();
    assert_eq!(a, b);
    let c = generate(&PhantomConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.intensity, c.intensity);
}

#[test]
fn no_lesions_gives_empty_labels() {
    let ph = generate(&PhantomConfig {
        lesion_count: 0,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(count(&ph.labels.flatten()), 0);
    assert_eq!(ph.lesion_mask.count_nonzero(), 0);
    assert!(count(&ph.prostate_frames.flatten()) > 0);
}

#[test]
fn unit_contrast_without_noise_hides_lesions() {
    let lesion = Ellipsoid {
        center_mm: PhantomConfig::default().prostate().center_mm,
        semi_axes_mm: [2.0, 2.0, 2.0],
    };
    let base = PhantomConfig {
        contrast: 1.0,
        speckle_std: 0.0,
        lesions: Some(vec![lesion]),
        ..Default::default()
    };
    let with = generate(&base).unwrap();
    let without = generate(&PhantomConfig {
        lesions: Some(vec![]),
        ..base.clone()
    })
    .unwrap();
    assert_eq!(with.intensity, without.intensity);
    assert!(count(&with.labels.flatten()) > 0);
    // Visible again once the contrast departs from 1.
    let visible = generate(&PhantomConfig {
        contrast: 1.5,
        ..base
    })
    .unwrap();
    assert_ne!(visible.intensity, without.intensity);
}

#[test]
fn lesion_volume_matches_ellipsoid() {
    for seed in 0..10 {
        let cfg = PhantomConfig {
            seed,
            lesion_count: 2,
            ..Default::default()
        };
        let ph = generate(&cfg).unwrap();
        let voxel = output_grid(&cfg).unwrap().voxel_volume_mm3();
        let expected: f64 = ph.scene.lesions.iter().map(|l| l.volume_mm3()).sum::<f64>() / voxel;
        let got = ph.lesion_mask.count_nonzero() as f64;
        assert!((got - expected).abs() / expected < 0.1, "seed {seed}: {got} vs {expected}");
        let gland = ph.scene.prostate.volume_mm3() / voxel;
        let got = ph.prostate.count_nonzero() as f64;
        assert!((got - gland).abs() / gland < 0.1, "seed {seed}: {got} vs {gland}");
    }
}

#[test]
fn lesion_outside_prostate_is_rejected() {
    let p = PhantomConfig::default().prostate();
    let mut far = p.center_mm;
    far[0] += p.semi_axes_mm[0];
    let cfg = PhantomConfig {
        lesions: Some(vec![Ellipsoid {
            center_mm: far,
            semi_axes_mm: [1.0; 3],
        }]),
        ..Default::default()
    };
    assert!(generate(&cfg).is_err());
    let impossible = PhantomConfig {
        lesion_radius_mm: [6.0, 7.0],
        ..Default::default()
    };
    assert!(generate(&impossible).is_err());
    assert!(generate(&PhantomConfig {
        contrast: 0.0,
        ..Default::default()
    })
    .is_err());
}

#[test]
fn speckle_has_unit_mean() {
    let clean = PhantomConfig {
        seed: 4,
        speckle_std: 0.0,
        lesion_count: 0,
        ..Default::default()
    };
    let a = generate(&clean).unwrap().intensity.flatten();
    let b = generate(&PhantomConfig {
        speckle_std: 0.3,
        ..clean
    })
    .unwrap()
    .intensity
    .flatten();
    // Use pixels far from the 255 clamp.
    let (mut sum, mut sq, mut n) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(&b) {
        if x > 20.0 && x < 150.0 {
            let r = y as f64 / x as f64;
            sum += r;
            sq += r * r;
            n += 1.0;
        }
    }
    let mean = sum / n;
    let sd = (sq / n - mean * mean).sqrt();
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    assert!((sd - 0.3).abs() < 0.015, "sd {sd}");
}

#[test]
fn lesions_darken_the_image() {
    let cfg = PhantomConfig {
        seed: 2,
        contrast: 2.0,
        speckle_std: 0.0,
        texture: 0.0,
        ..Default::default()
    };
    let ph = generate(&cfg).unwrap();
    let img = ph.intensity.flatten();
    let lab = ph.labels.flatten();
    let gland = ph.prostate_frames.flatten();
    let mean = |f: &dyn Fn(usize) -> bool| {
        let v: Vec<f64> = (0..img.len()).filter(|&i| f(i)).map(|i| img[i] as f64).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let inside = mean(&|i| lab[i] == 1);
    let tissue = mean(&|i| lab[i] == 0 && gland[i] == 1);
    assert!(inside < 0.75 * tissue, "{inside} vs {tissue}");
}

#[test]
fn stacks_round_trip_through_disk() {
    let ph = generate(&PhantomConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_stack(&dir.path().join("img"), &ph.intensity).unwrap();
    write_stack(&dir.path().join("lab"), &ph.labels).unwrap();
    assert_eq!(read_stack::<f32>(&dir.path().join("img")).unwrap(), ph.intensity);
    assert_eq!(read_stack::<u8>(&dir.path().join("lab")).unwrap(), ph.labels);
}

#[test]
fn config_rejects_unknown_keys() {
    let json = serde_json::to_string(&PhantomConfig::default()).unwrap();
    let back: PhantomConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, PhantomConfig::default());
    let partial: PhantomConfig = serde_json::from_str(r#"{"seed": 5, "contrast": 2.0}"#).unwrap();
    assert_eq!((partial.seed, partial.contrast), (5, 2.0));
    assert!(serde_json::from_str::<PhantomConfig>(r#"{"sed": 5}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lesions_stay_inside_the_gland(seed in any::<u64>(), n in 0usize..4) {
        let ph = generate(&PhantomConfig { seed, lesion_count: n, ..Default::default() }).unwrap();
        prop_assert_eq!(ph.scene.lesions.len(), n);
        for (l, p) in ph.lesion_mask.data().iter().zip(ph.prostate.data()) {
            prop_assert!(*l <= *p);
        }
        for (l, p) in ph.labels.flatten().iter().zip(ph.prostate_frames.flatten()) {
            prop_assert!(*l <= p);
        }
        prop_assert!(ph.intensity.flatten().iter().all(|v| (0.0..=255.0).contains(v)));
    }
}
