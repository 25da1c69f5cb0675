use stablelab::limit::{
    cf_distance_test, ks_gaussian_test, replicate_scaled_statistic, scaling_exponent_scan,
    Decision, LimitTarget, ReplicaConfig, ScaledSample,
};
use stablelab::noise::StableNoise;
use stablelab::rng::RngStream;
use stablelab::sde::{DriftModel, Scheme, TestFunction};
use stablelab::stats;

use rand_distr::{Distribution, StandardNormal};

fn noise() -> StableNoise {
    StableNoise::new(1.5, 1).unwrap()
}

fn replicas() -> ReplicaConfig {
    let mut rc = ReplicaConfig::new(1);
    rc.scheme = Scheme::SemiImplicit;
    rc
}

#[test]
fn linear_drift_identity_sample_has_median_zero() {
    let model = DriftModel::power(0.0).unwrap();
    let s = replicate_scaled_statistic(
        &model,
        &noise(),
        &TestFunction::identity(),
        1.0 / 1.5,
        50.0,
        2000,
        0.0,
        &replicas(),
        &RngStream::new(51, 0),
    )
    .unwrap();
    // Sign test: the count below zero is Binomial(n, 1/2) under median 0.
    let n = s.len() as f64;
    let below = s.values.iter().filter(|v| **v < 0.0).count() as f64;
    assert!((below - n / 2.0).abs() <= 3.0 * n.sqrt() / 2.0, "{below} of {n}");
}

#[test]
fn bounded_observable_sample_has_gaussian_kurtosis() {
    let model = DriftModel::power(0.6).unwrap();
    let s = replicate_scaled_statistic(
        &model,
        &noise(),
        &TestFunction::sin(),
        0.5,
        200.0,
        2000,
        0.0,
        &replicas(),
        &RngStream::new(52, 0),
    )
    .unwrap();
    let k = stats::kurtosis(&s.values);
    let se = (24.0 / s.len() as f64).sqrt();
    assert!((k - 3.0).abs() < 3.0 * se, "kurtosis {k} +- {se}");
}

fn normal_sample(seed: u64, stream: u64, n: usize, shift: f64) -> ScaledSample {
    let mut rng = RngStream::new(seed, stream);
    let values = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + shift
        })
        .collect();
    ScaledSample::from_values(values, 0.5, 1.0, 0.0).unwrap()
}

#[test]
fn gaussian_ks_test_is_calibrated() {
    // A 1%-level test rejects 1% of null samples; the observed rate carries
    // binomial error sqrt(0.01 * 0.99 / trials).
    let trials = 4000;
    let rejected = (0..trials)
        .filter(|&i| {
            let s = normal_sample(53, i, 2000, 0.0);
            ks_gaussian_test(&s, 1.0).unwrap().decision == Decision::Rejected
        })
        .count();
    let rate = rejected as f64 / trials as f64;
    let se = (0.01 * 0.99 / trials as f64).sqrt();
    assert!(rate <= 0.01 + 3.0 * se, "rejection rate {rate} ({rejected}/{trials})");
    let shifted = normal_sample(53, trials, 2000, 1.0);
    let v = ks_gaussian_test(&shifted, 1.0).unwrap();
    assert_eq!(v.decision, Decision::Rejected);
    assert!((v.statistic - 0.38).abs() < 0.05, "{}", v.statistic);
}

#[test]
fn exact_stable_draws_pass_the_cf_distance_test() {
    let sampler = noise().increment_sampler(1.0).unwrap();
    let mut rng = RngStream::new(54, 0);
    let values = (0..2000)
        .map(|_| {
            let mut z = [0.0];
            sampler.fill(&mut rng, &mut z);
            z[0]
        })
        .collect();
    let s = ScaledSample::from_values(values, 1.0 / 1.5, 1.0, 0.0).unwrap();
    let target = LimitTarget::Stable {
        alpha: 1.5,
        scale: 1.0,
    };
    let v = cf_distance_test(&s, &target, &[0.5, 1.0, 2.0]).unwrap();
    assert_eq!(v.decision, Decision::Consistent, "{}", v.statistic);
}

#[test]
fn gaussian_cells_scale_like_square_root() {
    let t_grid = [64.0, 128.0, 256.0, 512.0];
    for (theta, h) in [(0.6, TestFunction::identity()), (0.0, TestFunction::sin())] {
        let model = DriftModel::power(theta).unwrap();
        let scan = scaling_exponent_scan(
            &model,
            &noise(),
            &h,
            &t_grid,
            1000,
            0.0,
            &replicas(),
            &RngStream::new(55, 0),
        )
        .unwrap();
        assert!(
            (scan.gamma_hat - 0.5).abs() <= 0.08,
            "theta {theta}, {}: {} +- {}",
            h.name(),
            scan.gamma_hat,
            scan.stderr
        );
    }
}
