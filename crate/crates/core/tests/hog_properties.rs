use ndarray::Array2;
use proptest::prelude::*;

use gprhog::features::{alarm_feature, GprHogConfig};
use gprhog::hog::{gradients, hog_feature, HogConfig};
use gprhog::volume::Volume;

fn patch() -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-50.0..50.0f64, 18 * 20).prop_map(|v| Array2::from_shape_vec((18, 20), v).unwrap())
}

/// Patches on a 1/32 grid: shifting by a grid value keeps every difference exact.
fn dyadic_patch() -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-512i32..512, 18 * 20)
        .prop_map(|v| Array2::from_shape_vec((18, 20), v.into_iter().map(|x| x as f64 / 32.0).collect()).unwrap())
}

fn unnormalized() -> HogConfig {
    HogConfig {
        normalize: false,
        ..HogConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn entries_are_non_negative(p in patch(), normalize in any::<bool>()) {
        let cfg = HogConfig { normalize, ..HogConfig::default() };
        prop_assert!(hog_feature(p.view(), &cfg).unwrap().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn brightness_shift_is_exact(p in dyadic_patch(), b in -64i32..64, normalize in any::<bool>()) {
        let cfg = HogConfig { normalize, ..HogConfig::default() };
        let shifted = p.mapv(|v| v + b as f64 / 4.0);
        prop_assert_eq!(hog_feature(p.view(), &cfg).unwrap(), hog_feature(shifted.view(), &cfg).unwrap());
    }

    #[test]
    fn unnormalized_scales_linearly(p in patch(), a in 0.01..100.0f64) {
        let f = hog_feature(p.view(), &unnormalized()).unwrap();
        let fa = hog_feature(p.mapv(|v| a * v).view(), &unnormalized()).unwrap();
        for (x, y) in f.iter().zip(&fa) {
            prop_assert!((a * x - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn normalized_is_contrast_invariant(p in patch(), a in 0.01..100.0f64) {
        let cfg = HogConfig { norm_epsilon: 0.0, ..HogConfig::default() };
        let f = hog_feature(p.view(), &cfg).unwrap();
        let fa = hog_feature(p.mapv(|v| a * v).view(), &cfg).unwrap();
        for (x, y) in f.iter().zip(&fa) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn sum_rule(p in patch()) {
        let total: f64 = hog_feature(p.view(), &unnormalized()).unwrap().iter().sum();
        let mags = gradients(p.view()).unwrap().magnitude.sum();
        prop_assert!((total - mags).abs() <= 1e-9 * mags.max(1.0));
    }

    #[test]
    fn directions_are_folded(p in patch()) {
        let g = gradients(p.view()).unwrap();
        prop_assert!(g.direction_deg.iter().all(|&d| (0.0..180.0).contains(&d)));
    }
}

#[test]
fn alarm_feature_halves_are_directional_hogs() {
    // a volume varying only down-track has no cross-track gradient content
    let data = ndarray::Array3::from_shape_fn((40, 30, 60), |(d, _, t)| ((d as f64) * 0.7 + t as f64 * 0.2).sin());
    let v = Volume::new(data, 0.1, 0.05, 0.05).unwrap();
    let cfg = GprHogConfig {
        hog: unnormalized(),
        ..GprHogConfig::default()
    };
    let f = alarm_feature(&v, (20, 15), 30, &cfg).unwrap();
    assert_eq!(f.len(), 216);
    let (cross, down) = f.split_at(108);
    assert!(down.iter().sum::<f64>() > 1.0);
    // cross-track B-scan sees only the time variation: all weight in the 90° bin
    for cell in cross.chunks(9) {
        assert!(cell.iter().enumerate().all(|(b, &v)| b == 4 || b == 5 || v == 0.0), "{cell:?}");
    }
}
