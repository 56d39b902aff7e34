mod common;

use common::{oracle_bland_altman, oracle_nrmse, oracle_pearson, rel_err, SplitMix};
use mtnet_core::data::BrainMask;
use mtnet_core::evaluation::{bland_altman, nrmse_values, pearson, NrmseNorm};
use proptest::collection::vec;
use proptest::prelude::*;

#[test]
fn hundred_random_instances_match_oracles() {
    let mut rng = SplitMix(81);
    for _ in 0..100 {
        let n = rng.int(3, 80);
        let pairs: Vec<(f64, f64)> = (0..n).map(|_| (rng.range(5.0, 90.0), rng.range(5.0, 90.0))).collect();
        let ba = bland_altman(&pairs).unwrap();
        let (bias, sd, lo, hi) = oracle_bland_altman(&pairs);
        assert_eq!(ba.n, n);
        assert!(rel_err(ba.bias, bias) < 1e-9, "{} vs {bias}", ba.bias);
        assert!(rel_err(ba.sd, sd) < 1e-9);
        assert!(rel_err(ba.loa_low, lo) < 1e-9);
        assert!(rel_err(ba.loa_high, hi) < 1e-9);
        assert!(rel_err(pearson(&pairs).unwrap(), oracle_pearson(&pairs)) < 1e-9);
    }
}

#[test]
fn constant_difference_has_zero_width_limits() {
    let pairs: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 * 3.0 + 7.5, i as f64 * 3.0)).collect();
    let ba = bland_altman(&pairs).unwrap();
    assert!((ba.bias - 7.5).abs() < 1e-12);
    assert!(ba.sd < 1e-12);
    assert!((ba.loa_high - ba.loa_low).abs() < 1e-11);
}

proptest! {
    #[test]
    fn perfect_linear_relation_is_unit_correlation(
        xs in vec(-100.0f64..100.0, 3..50),
        slope in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        icpt in -20.0f64..20.0,
    ) {
        let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let pairs: Vec<(f64, f64)> = xs.iter().map(|&x| (x, slope * x + icpt)).collect();
        let r = pearson(&pairs).unwrap();
        prop_assert!((r - slope.signum()).abs() < 1e-9, "r = {}", r);
    }

    #[test]
    fn nrmse_matches_oracle(
        reference in vec(0.1f32..4.0, 4..200),
        noise in vec(-0.5f32..0.5, 200),
        keep in vec(any::<bool>(), 200),
    ) {
        let n = reference.len();
        let pred: Vec<f32> = reference.iter().zip(&noise).map(|(r, e)| r + e).collect();
        let mut inside: Vec<bool> = keep[..n].to_vec();
        inside[0] = true;
        let mask = BrainMask::new([n, 1, 1], inside.clone()).unwrap();
        prop_assert_eq!(nrmse_values(&reference, &reference, Some(&mask), NrmseNorm::Mean).unwrap(), 0.0);
        let got = nrmse_values(&reference, &pred, Some(&mask), NrmseNorm::Mean).unwrap();
        prop_assert!(rel_err(got, oracle_nrmse(&reference, &pred, &inside)) < 1e-9);
    }

    #[test]
    fn bias_shifts_with_offset(pairs in vec((0.0f64..50.0, 0.0f64..50.0), 3..40), d in -10.0f64..10.0) {
        let a = bland_altman(&pairs).unwrap();
        let shifted: Vec<(f64, f64)> = pairs.iter().map(|&(t, p)| (t + d, p)).collect();
        let b = bland_altman(&shifted).unwrap();
        prop_assert!((b.bias - a.bias - d).abs() < 1e-9);
        prop_assert!((b.sd - a.sd).abs() < 1e-9);
    }
}

#[test]
fn too_few_pairs_is_an_error() {
    assert!(bland_altman(&[(1.0, 2.0)]).is_err());
    assert!(pearson(&[(1.0, 2.0)]).is_err());
    assert!(pearson(&[(1.0, 2.0), (1.0, 3.0)]).is_err());
}
