use stablelab::ergodics::{sample_invariant, EmpiricalMeasure, InvariantConfig};
use stablelab::noise::StableNoise;
use stablelab::poisson::{poisson_solve_mc, PoissonConfig, PoissonGrid};
use stablelab::quadrature::QuadratureConfig;
use stablelab::rng::RngStream;
use stablelab::sde::{DriftModel, Scheme, TestFunction};
use stablelab::variance::{variance_batch_means, variance_formula, BatchMeansConfig};

fn noise() -> StableNoise {
    StableNoise::new(1.5, 1).unwrap()
}

fn invariant(model: &DriftModel, seed: u64) -> EmpiricalMeasure {
    let mut cfg = InvariantConfig::new(1, 2000.0, 8);
    cfg.scheme = Scheme::SemiImplicit;
    sample_invariant(model, &noise(), &cfg, &RngStream::new(seed, 0)).unwrap()
}

fn batch_means(model: &DriftModel, h: &TestFunction, horizon: f64, n_batches: usize, dt: f64, seed: u64) -> (f64, f64) {
    let mut cfg = BatchMeansConfig::new(1, horizon, n_batches);
    cfg.scheme = Scheme::SemiImplicit;
    cfg.dt = dt;
    let v = variance_batch_means(model, &noise(), h, &cfg, &RngStream::new(seed, 1)).unwrap();
    (v.value, v.stderr)
}

#[test]
fn bounded_observable_solution_grows_sublinearly_and_formula_matches_batch_means() {
    let model = DriftModel::power(0.6).unwrap();
    let h = TestFunction::sin();
    let quad = QuadratureConfig::default();
    let mu = invariant(&model, 41);
    let (m, se) = mu.mean_of(&h);
    let grid = PoissonGrid::from_measure(&mu, 201, 0.005, 0.995)
        .unwrap()
        .with_wings(16, 2.0 * quad.outer_radius)
        .unwrap();
    let mut cfg = PoissonConfig::new(256, m, se);
    cfg.scheme = Scheme::SemiImplicit;
    let fh = poisson_solve_mc(&model, &noise(), &h, &grid, &cfg, &RngStream::new(41, 2)).unwrap();
    let growth = fh.growth_exponent().unwrap();
    assert!(growth < 1.0, "growth exponent {growth}");

    let vf = variance_formula(&fh, &mu, &noise(), &quad).unwrap();
    let (vb, _) = batch_means(&model, &h, 2e5, 1000, 0.01, 41);
    assert!(!vf.diverged);
    assert!((vf.value - vb).abs() / vb < 0.2, "formula {} vs batch means {vb}", vf.value);
}

#[test]
fn batch_means_is_stable_under_horizon_doubling() {
    let model = DriftModel::power(0.6).unwrap();
    let h = TestFunction::sin();
    let (a, sa) = batch_means(&model, &h, 1e5, 500, 0.01, 42);
    let (b, sb) = batch_means(&model, &h, 2e5, 1000, 0.01, 43);
    assert!(a > 0.0 && a.is_finite());
    assert!((a - b).abs() < 3.0 * sa.hypot(sb), "{a} +- {sa} vs {b} +- {sb}");
}

#[test]
fn batch_means_keeps_growing_without_a_finite_variance() {
    // With fixed n_batches the block length scales with the horizon, and
    // block sums of the identity grow like L^(1/alpha) instead of L^(1/2).
    let model = DriftModel::power(0.0).unwrap();
    let h = TestFunction::identity();
    let estimates: Vec<f64> = [1e4, 1e5, 1e6]
        .iter()
        .map(|&horizon| {
            let mut v: Vec<f64> = (0..5)
                .map(|k| batch_means(&model, &h, horizon, 50, 0.05, 44 + k).0)
                .collect();
            v.sort_by(f64::total_cmp);
            v[2]
        })
        .collect();
    assert!(
        estimates.windows(2).all(|w| w[1] > 1.3 * w[0]),
        "median estimates {estimates:?}"
    );
}
