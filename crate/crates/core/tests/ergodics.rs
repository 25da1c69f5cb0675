use stablelab::ergodics::{
    moment_probe, sample_invariant, w1_decay, wasserstein1_1d, InvariantConfig, MomentConfig,
};
use stablelab::noise::StableNoise;
use stablelab::rng::RngStream;
use stablelab::sde::{DriftModel, Scheme};

fn noise() -> StableNoise {
    StableNoise::new(1.5, 1).unwrap()
}

fn config(horizon: f64, stride: usize) -> InvariantConfig {
    let mut cfg = InvariantConfig::new(1, horizon, 8);
    cfg.stride = stride;
    cfg.antithetic = false;
    cfg.scheme = Scheme::SemiImplicit;
    cfg
}

#[test]
fn symmetric_drifts_have_centred_invariant_samples() {
    for (i, theta) in [0.0, 0.3, 1.0].into_iter().enumerate() {
        let model = DriftModel::power(theta).unwrap();
        let mu = sample_invariant(&model, &noise(), &config(2000.0, 10), &RngStream::new(31, i as u64))
            .unwrap();
        let (m, se) = mu.mean_of_fn(|x| x[0]);
        assert!(m.abs() < 3.0 * se, "theta {theta}: {m} +- {se}");
    }
}

#[test]
fn fractional_moment_is_stable_under_horizon_doubling() {
    let model = DriftModel::power(0.5).unwrap();
    let moment = |horizon, stream| {
        let mu = sample_invariant(&model, &noise(), &config(horizon, 10), &RngStream::new(32, stream))
            .unwrap();
        mu.mean_of_fn(|x| x[0].abs().powf(1.2))
    };
    let (a, sa) = moment(2000.0, 0);
    let (b, sb) = moment(4000.0, 1);
    assert!(a.is_finite() && b.is_finite());
    assert!((a - b).abs() < 3.0 * sa.hypot(sb), "{a} +- {sa} vs {b} +- {sb}");
}

#[test]
fn doubling_the_stride_keeps_bounded_averages() {
    let model = DriftModel::power(0.6).unwrap();
    let avg = |stride, stream| {
        let mu = sample_invariant(&model, &noise(), &config(2000.0, stride), &RngStream::new(33, stream))
            .unwrap();
        mu.mean_of_fn(|x| x[0].cos())
    };
    let (a, sa) = avg(10, 0);
    let (b, sb) = avg(20, 1);
    assert!((a - b).abs() < 3.0 * sa.hypot(sb), "{a} vs {b}");
}

#[test]
fn linear_drift_moment_constant_settles() {
    let model = DriftModel::power(0.0).unwrap();
    let cfg = MomentConfig {
        dt: 0.01,
        n_paths: 4000,
        scheme: Scheme::SemiImplicit,
    };
    let report = moment_probe(
        &model,
        &noise(),
        1.2,
        &[2.0, 4.0, 8.0, 16.0],
        &[vec![0.0]],
        &cfg,
        &RngStream::new(34, 0),
    )
    .unwrap();
    let c = &report.bound_constants()[0];
    let se = &report.standard_errors[0];
    assert!(c.iter().all(|v| v.is_finite() && *v > 0.0));
    for k in 1..3 {
        assert!((c[k + 1] - c[k]).abs() < 3.0 * se[k].hypot(se[k + 1]), "{c:?} {se:?}");
    }
    assert!(moment_probe(&model, &noise(), 1.5, &[1.0], &[vec![0.0]], &cfg, &RngStream::new(34, 1)).is_err());
}

#[test]
fn laws_from_different_starts_contract() {
    let cfg = MomentConfig {
        dt: 0.01,
        n_paths: 2000,
        scheme: Scheme::SemiImplicit,
    };
    for theta in [0.0, 0.5] {
        let model = DriftModel::power(theta).unwrap();
        let d = w1_decay(&model, &noise(), 0.0, 5.0, &[1.0, 2.0, 4.0, 8.0], &cfg, &RngStream::new(35, 0))
            .unwrap();
        assert!(d.log_slope < 0.0, "theta {theta}: {:?}", d.distances);
        assert!(d.distances[0] > d.distances[3]);
    }
}

#[test]
fn w1_of_shifted_sample_is_the_shift() {
    let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 0.25).collect();
    assert!((wasserstein1_1d(&a, &b).unwrap() - 0.25).abs() < 1e-12);
}
