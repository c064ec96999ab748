use std::f64::consts::PI;

use gapweight::decay::{inverse_softplus, softplus, DecayFamily, DecayParam};
use gapweight::objective::{bce, weighted_loss, weighted_loss_with, Hyperparams, Weighting};
use proptest::prelude::*;

fn family() -> impl Strategy<Value = DecayFamily> {
    prop::sample::select(DecayFamily::ALL.to_vec())
}

/// BCE of a logit written as a log-sum-exp, independent of the clamped form.
fn bce_from_logit(z: f64, y: u8) -> f64 {
    let s = if y == 1 { -z } else { z };
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

fn batch() -> impl Strategy<Value = (Vec<f64>, Vec<u8>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-6.0f64..6.0, n),
            prop::collection::vec(0u8..=1, n),
            prop::collection::vec(0.0f64..30.0, n),
        )
    })
}

#[test]
fn derived_weights() {
    let at = |f: DecayFamily, rate: f64, gap: f64| DecayParam::from_rate(f, rate).unwrap().weight(gap).unwrap();
    assert!((at(DecayFamily::Linear, 0.1, 5.0) - 0.5).abs() < 1e-12);
    assert_eq!(at(DecayFamily::Linear, 0.1, 12.0), 0.0);
    assert!((at(DecayFamily::Exponential, 0.1, 10.0) - (-1.0f64).exp()).abs() < 1e-12);
    assert!((at(DecayFamily::Inverse, 0.2, 5.0) - 0.5).abs() < 1e-12);
    assert!((at(DecayFamily::CosineAnnealing, 0.1, 5.0) - 0.5).abs() < 1e-12);
    let quarter = 0.5 * (1.0 + (PI / 4.0).cos());
    assert!((at(DecayFamily::CosineAnnealing, 0.1, 2.5) - quarter).abs() < 1e-12);
    assert_eq!(at(DecayFamily::CosineAnnealing, 0.1, 10.5), 0.0);
}

#[test]
fn derived_loss_values() {
    // Two samples at logit 0 (BCE ln 2), uniform weights: total = ln 2 - 0.5.
    let hp = Hyperparams::default();
    let out = weighted_loss_with(&[0.0, 0.0], &[0, 1], &[1.0, 9.0], &Weighting::Uniform, &hp).unwrap();
    assert!((out.total - (2f64.ln() - 0.5)).abs() < 1e-15);
    // Linear decay at rate 0.1: weights 0.9 and 0.1, mean 0.5.
    let p = DecayParam::from_rate(DecayFamily::Linear, 0.1).unwrap();
    let out = weighted_loss(&[0.0, 0.0], &[0, 1], &[1.0, 9.0], &p, &hp).unwrap();
    assert!((out.mean_weight - 0.5).abs() < 1e-12);
    assert!((out.weighted_bce - 0.5 * 2f64.ln()).abs() < 1e-12);
    assert!((out.total - 0.5 * (2f64.ln() - 0.5)).abs() < 1e-12);
}

#[test]
fn bce_clamps_saturated_probabilities() {
    let eps = 1e-7;
    assert!((bce(0.0, 1, eps) + eps.ln()).abs() < 1e-12);
    // 1 - (1 - eps) is not exactly eps in binary.
    assert!((bce(1.0, 0, eps) + eps.ln()).abs() < 1e-8);
    assert!(bce(0.0, 0, eps).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decay_shape(f in family(), a in 0.0f64..5.0, b in 0.0f64..5.0) {
        prop_assert_eq!(f.value(0.0), 1.0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (g_lo, g_hi) = (f.value(lo), f.value(hi));
        prop_assert!((0.0..=1.0).contains(&g_lo) && (0.0..=1.0).contains(&g_hi));
        prop_assert!(g_hi <= g_lo);
    }

    #[test]
    fn slope_matches_difference_quotient(f in family(), x in 0.001f64..4.0) {
        let h = 1e-6;
        prop_assume!(f.kinks().iter().all(|k| (x - k).abs() > 10.0 * h));
        let numeric = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
        prop_assert!((f.slope(x) - numeric).abs() < 1e-6, "{} at {}: {} vs {}", f, x, f.slope(x), numeric);
    }

    #[test]
    fn softplus_round_trips(rate in 1e-6f64..50.0) {
        let raw = inverse_softplus(rate);
        prop_assert!((softplus(raw) - rate).abs() <= 1e-9 * rate.max(1.0));
        // softplus(r) = ln(1 + e^r) directly where that is safe.
        prop_assume!(raw < 30.0);
        prop_assert!((softplus(raw) - raw.exp().ln_1p()).abs() < 1e-12);
    }

    #[test]
    fn uniform_total_is_mean_bce_minus_lambda((z, y, gaps) in batch()) {
        let hp = Hyperparams::default();
        let out = weighted_loss_with(&z, &y, &gaps, &Weighting::Uniform, &hp).unwrap();
        let mean = z.iter().zip(&y).map(|(&z, &y)| bce_from_logit(z, y)).sum::<f64>() / z.len() as f64;
        prop_assert!((out.total - (mean - hp.lambda)).abs() < 1e-12);
        prop_assert_eq!(out.mean_weight, 1.0);
        prop_assert_eq!(out.d_total_d_raw_alpha, 0.0);
    }

    #[test]
    fn decay_total_matches_direct_sum((z, y, gaps) in batch(), f in family(), rate in 0.01f64..0.5) {
        let hp = Hyperparams::default();
        let p = DecayParam::from_rate(f, rate).unwrap();
        let out = weighted_loss(&z, &y, &gaps, &p, &hp).unwrap();
        let n = z.len() as f64;
        let mut want = 0.0;
        for i in 0..z.len() {
            let w = f.value(rate * gaps[i]);
            want += w * bce_from_logit(z[i], y[i]) - hp.lambda * w;
        }
        prop_assert!((out.total - want / n).abs() < 1e-10);
    }

    #[test]
    fn logit_gradient_matches_difference_quotient((z, y, gaps) in batch(), f in family(), rate in 0.01f64..0.5) {
        let hp = Hyperparams::default();
        let p = DecayParam::from_rate(f, rate).unwrap();
        let out = weighted_loss(&z, &y, &gaps, &p, &hp).unwrap();
        let h = 1e-6;
        for i in 0..z.len() {
            let mut up = z.clone();
            up[i] += h;
            let mut down = z.clone();
            down[i] -= h;
            let numeric = (weighted_loss(&up, &y, &gaps, &p, &hp).unwrap().total
                - weighted_loss(&down, &y, &gaps, &p, &hp).unwrap().total) / (2.0 * h);
            prop_assert!((out.d_total_d_logits[i] - numeric).abs() < 1e-7);
        }
    }

    #[test]
    fn raw_alpha_gradient_matches_difference_quotient((z, y, gaps) in batch(), f in family(), rate in 0.01f64..0.5) {
        let h = 1e-6;
        prop_assume!(gaps.iter().all(|g| f.kinks().iter().all(|k| (rate * g - k).abs() > 1e-3)));
        let hp = Hyperparams::default();
        let raw = inverse_softplus(rate);
        let total = |r: f64| weighted_loss(&z, &y, &gaps, &DecayParam::from_raw(f, r), &hp).unwrap().total;
        let analytic = weighted_loss(&z, &y, &gaps, &DecayParam::from_raw(f, raw), &hp).unwrap().d_total_d_raw_alpha;
        let numeric = (total(raw + h) - total(raw - h)) / (2.0 * h);
        prop_assert!((analytic - numeric).abs() < 1e-6, "{} vs {}", analytic, numeric);
    }

    #[test]
    fn bonus_cancels_when_every_loss_equals_lambda(f in family(), rate in 0.01f64..0.5, gaps in prop::collection::vec(0.0f64..30.0, 1..30)) {
        // A logit whose BCE against label 1 is exactly ln 2 when lambda = ln 2.
        let hp = Hyperparams { lambda: 2f64.ln(), ..Default::default() };
        let n = gaps.len();
        let p = DecayParam::from_rate(f, rate).unwrap();
        let out = weighted_loss(&vec![0.0; n], &vec![1; n], &gaps, &p, &hp).unwrap();
        prop_assert!(out.d_total_d_raw_alpha.abs() < 1e-15);
        prop_assert!(out.total.abs() < 1e-15);
    }
}
