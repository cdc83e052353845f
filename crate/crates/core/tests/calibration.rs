mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcal::calibration::{apply_temperature, brier, ece, fit_temperature, nll, reliability_curve};
use semcal::Matrix;

use common::{ece_oracle, grid_temperature, nll_oracle, scaled_logit_dump};

#[test]
fn ece_matches_oracle_across_bin_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for bins in 1..=25 {
        for _ in 0..8 {
            let n = rng.random_range(1..=400);
            let conf: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        rng.random_range(0..=bins) as f64 / bins as f64
                    } else {
                        rng.random()
                    }
                })
                .collect();
            let correct: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let got = ece(&conf, &correct, bins).unwrap().ece;
            assert!((got - ece_oracle(&conf, &correct, bins)).abs() <= 1e-12);
        }
    }
}

#[test]
fn brier_matches_direct_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let conf: Vec<f64> = (0..500).map(|_| rng.random()).collect();
    let correct: Vec<bool> = (0..500).map(|_| rng.random_bool(0.4)).collect();
    let mut want = 0.0;
    for (c, &y) in conf.iter().zip(&correct) {
        let o = if y { 1.0 } else { 0.0 };
        want += (c - o) * (c - o);
    }
    want /= 500.0;
    assert!((brier(&conf, &correct).unwrap() - want).abs() < 1e-12);
}

#[test]
fn reliability_histogram_partitions_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let conf: Vec<f64> = (0..300).map(|_| rng.random()).collect();
    let correct: Vec<bool> = conf.iter().map(|&c| rng.random::<f64>() < c).collect();
    let curve = reliability_curve(&conf, &correct, 10).unwrap();
    let h = &curve.histogram;
    assert_eq!(h.overall.iter().sum::<usize>(), 300);
    for i in 0..10 {
        assert_eq!(h.overall[i], h.correct[i] + h.incorrect[i]);
        assert_eq!(h.overall[i], curve.bins[i].count);
    }
}

#[test]
fn nll_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (rows, targets) = scaled_logit_dump(200, 7, 1.5, &mut rng);
    let m = Matrix::from_rows(&rows).unwrap();
    for t in [0.1, 0.5, 1.0, 2.0, 7.5] {
        assert!((nll(&m, &targets, t).unwrap() - nll_oracle(&rows, &targets, t)).abs() < 1e-12);
    }
}

#[test]
fn calibrated_dump_recovers_unit_temperature() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (rows, targets) = scaled_logit_dump(10_000, 10, 1.0, &mut rng);
    let fit = fit_temperature(&Matrix::from_rows(&rows).unwrap(), &targets).unwrap();
    let t = fit.temperature.get();
    assert!((t - 1.0).abs() <= 0.05, "T = {t}");
    assert!((t - grid_temperature(&rows, &targets)).abs() <= 0.0101);
    assert!(fit.nll <= fit.nll_at_init + 1e-12);
}

#[test]
fn scaled_dumps_recover_their_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in [0.5, 2.0, 3.0] {
        let (rows, targets) = scaled_logit_dump(10_000, 10, k, &mut rng);
        let t = fit_temperature(&Matrix::from_rows(&rows).unwrap(), &targets)
            .unwrap()
            .temperature
            .get();
        assert!((t - k).abs() <= 0.05 * k, "k = {k}, T = {t}");
        assert!((t - grid_temperature(&rows, &targets)).abs() <= 0.0101);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn temperature_preserves_argmax_and_normalization(
        logits in prop::collection::vec(-50.0f64..50.0, 2..40),
        t in 1e-3f64..=20.0,
    ) {
        let p = apply_temperature(&logits, t).unwrap();
        let argmax = |xs: &[f64]| xs.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b }).0;
        prop_assert_eq!(argmax(&p), argmax(&logits));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

proptest! {
    #[test]
    fn ece_is_bounded_and_permutation_invariant(
        pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200),
        bins in 1usize..20,
        seed in any::<u64>(),
    ) {
        let (conf, correct): (Vec<f64>, Vec<bool>) = pairs.iter().cloned().unzip();
        let e = ece(&conf, &correct, bins).unwrap().ece;
        prop_assert!((0.0..=1.0).contains(&e));
        let mut idx: Vec<usize> = (0..conf.len()).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let c2: Vec<f64> = idx.iter().map(|&i| conf[i]).collect();
        let y2: Vec<bool> = idx.iter().map(|&i| correct[i]).collect();
        prop_assert!((ece(&c2, &y2, bins).unwrap().ece - e).abs() < 1e-12);
    }

    #[test]
    fn unit_confidence_ece_and_brier_equal_error_rate(correct in prop::collection::vec(any::<bool>(), 1..500)) {
        let conf = vec![1.0; correct.len()];
        let err = correct.iter().filter(|&&c| !c).count() as f64 / correct.len() as f64;
        prop_assert!((ece(&conf, &correct, 10).unwrap().ece - err).abs() < 1e-12);
        prop_assert!((brier(&conf, &correct).unwrap() - err).abs() < 1e-12);
    }
}
