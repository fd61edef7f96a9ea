mod common;

use approx::assert_relative_eq;
use common::SIGMA_NC_GRID;
use kband::environment::PhaseFeedback;
use kband::privacy::{
    central_noise_scale, central_privatize, local_noise_scale, shuffle_clip_bound, shuffle_roundtrip, PrivacyBudget,
    PrivacyContext, Privatizer, ShuffleParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn central_scale_matches_frozen_grid() {
    for &(k, s, h, u, eps, delta, expected) in &SIGMA_NC_GRID {
        let b = PrivacyBudget::new(eps, delta, None, None).unwrap();
        let got = central_noise_scale(k, s, h, u, &b).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-12);
    }
}

#[test]
fn local_scale_is_monotone() {
    let b = PrivacyBudget::new(5.0, 1e-6, None, None).unwrap();
    let b2 = PrivacyBudget::new(10.0, 1e-6, None, None).unwrap();
    let a = local_noise_scale(1.0, 0.01, 10, &b).unwrap();
    assert!(local_noise_scale(1.0, 0.01, 20, &b).unwrap() > a);
    assert_relative_eq!(local_noise_scale(1.0, 0.01, 10, &b2).unwrap(), a / 2.0, max_relative = 1e-12);
}

fn ks_statistic(mut xs: Vec<f64>, sd: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let dist = Normal::new(0.0, sd).unwrap();
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = dist.cdf(x);
            (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn central_noise_is_gaussian_with_the_right_variance() {
    let sd = 0.37;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut draws = vec![0.0; n];
    central_privatize(&mut draws, sd, &mut rng).unwrap();
    let var = draws.iter().map(|x| x * x).sum::<f64>() / n as f64;
    assert!((var / (sd * sd) - 1.0).abs() < 0.05, "variance ratio {}", var / (sd * sd));
    // 1% critical value of the one-sample KS statistic
    let d = ks_statistic(draws, sd);
    assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {d}");
}

fn feedback(users: usize, h: usize, rng: &mut ChaCha8Rng) -> PhaseFeedback {
    PhaseFeedback {
        per_participant: (0..users).map(|_| (0..h).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect(),
        cost: (users * h) as u64,
    }
}

fn ctx() -> PrivacyContext {
    PrivacyContext {
        kappa_sq: 1.0,
        sigma_sq: 0.01,
        rkhs_norm: 1.0,
        c: 1.6,
        gamma_t: 10.0,
    }
}

#[test]
fn local_aggregate_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fb = feedback(5, 2, &mut rng);
    let mean = fb.average();
    let b = PrivacyBudget::new(10.0, 1e-4, None, None).unwrap();
    let p = Privatizer::Local(b);
    let sd = local_noise_scale(1.0, 0.01, 2, &b).unwrap() / 5f64.sqrt();
    let trials = 20_000;
    let mut sq = 0.0;
    for _ in 0..trials {
        let out = p.apply(&fb, &ctx(), &mut rng, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        sq += (out.ybar[0] - mean[0]).powi(2);
    }
    let var = sq / trials as f64;
    assert!((var / (sd * sd) - 1.0).abs() < 0.05);
}

#[test]
fn shuffle_is_unbiased_and_conserves_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut shuf = ChaCha8Rng::seed_from_u64(6);
    let (users, s) = (20, 3);
    let params = ShuffleParams::new(s, users, 15.0, 5e-7).unwrap();
    let delta = shuffle_clip_bound(1.0, 1.0, 0.01, s, 5e-7).unwrap();
    let inputs: Vec<Vec<f64>> = (0..users).map(|_| (0..s).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
    let truth: Vec<f64> = (0..s).map(|j| inputs.iter().map(|v| v[j]).sum::<f64>() / users as f64).collect();
    let trials = 2_000;
    let mut sum = vec![0.0; s];
    for _ in 0..trials {
        let out = shuffle_roundtrip(&inputs, delta, &params, &mut rng, &mut shuf).unwrap();
        for j in 0..s {
            assert_eq!(out.bits_per_coordinate[j], (params.g + params.b) * users as u64);
            sum[j] += out.average[j];
        }
    }
    let se = params.worst_case_variance(delta).sqrt() / (trials as f64).sqrt();
    for j in 0..s {
        assert!((sum[j] / trials as f64 - truth[j]).abs() < 4.0 * se);
    }
}

#[test]
fn shuffle_without_noise_recovers_grid_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = ShuffleParams::new(2, 4, 15.0, 1e-6).unwrap();
    params.p = 0.0;
    let delta = 2.0;
    let step = 2.0 * delta / params.g as f64;
    let mid = (params.g / 2) as f64;
    let inputs: Vec<Vec<f64>> = (0..4)
        .map(|u| vec![-delta + step * (mid + u as f64 - 1.0), -delta + step * (mid - u as f64)])
        .collect();
    let out = shuffle_roundtrip(&inputs, delta, &params, &mut rng, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for j in 0..2 {
        let truth = inputs.iter().map(|v| v[j]).sum::<f64>() / 4.0;
        assert_relative_eq!(out.average[j], truth, epsilon = 1e-12);
    }
}

proptest! {
    #[test]
    fn shuffle_params_are_valid(s in 1usize..200, n in 1usize..20_000, eps in 0.1f64..50.0) {
        let p = ShuffleParams::new(s, n, eps, 5e-7).unwrap();
        prop_assert!(p.g >= 10 && (p.g as f64) >= (s as f64).sqrt());
        prop_assert!(p.b >= 1);
        prop_assert!(p.p > 0.0 && p.p <= 0.5 + 1e-12);
    }

    #[test]
    fn none_privatizer_returns_the_average(users in 1usize..10, h in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fb = feedback(users, h, &mut rng);
        let out = Privatizer::None.apply(&fb, &ctx(), &mut rng, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        prop_assert_eq!(out.ybar, fb.average());
        prop_assert_eq!(out.sigma_n, 0.0);
    }
}
