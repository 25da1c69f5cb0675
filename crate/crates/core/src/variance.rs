//! Asymptotic variance of time averages: the jump-integral formula applied
//! to a Poisson solution, and batch means along one long trajectory.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::ergodics::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::jumps::{fd_gradient, JumpQuadrature};
use crate::noise::StableNoise;
use crate::poisson::PoissonSolution;
use crate::quadrature::QuadratureConfig;
use crate::rng::RngStream;
use crate::sde::{run_replicas, DriftModel, Scheme, SimConfig, Stepper, TestFunction};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Formula,
    BatchMeans,
}

/// Fields that do not apply to a method are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub stderr: f64,
    pub method: VarianceMethod,
    /// Set when the formula grows by more than the divergence threshold
    /// between `truncation_radius` and twice that radius; `value` is then
    /// the radius-`R` estimate of an infinite quantity.
    pub diverged: bool,
    pub truncation_radius: Option<f64>,
    pub value_at_double_radius: Option<f64>,
    /// `log2(V(2R) / V(R))`.
    pub growth_exponent: Option<f64>,
    pub inside_fraction: Option<f64>,
    /// Share of jump-integral evaluations that fell outside the tabulated
    /// grid and used linear extrapolation.
    pub extrapolated_fraction: Option<f64>,
    pub n_outer_points: Option<usize>,
    pub horizon: Option<f64>,
    pub n_batches: Option<usize>,
    pub block_length: Option<f64>,
}

impl VarianceEstimate {
    fn blank(method: VarianceMethod, value: f64, stderr: f64) -> Self {
        Self {
            value,
            stderr,
            method,
            diverged: false,
            truncation_radius: None,
            value_at_double_radius: None,
            growth_exponent: None,
            inside_fraction: None,
            extrapolated_fraction: None,
            n_outer_points: None,
            horizon: None,
            n_batches: None,
            block_length: None,
        }
    }
}

pub const REQUIRED_COVERAGE: f64 = 0.99;

/// `int int [f_h(x+z) - f_h(x)]^2 nu(dz) mu(dx)`, with the outer integral
/// averaged over (thinned) invariant-measure points and the inner one over
/// `|z| <= R`. Evaluated at `R` and `2R` to detect divergence.
pub fn variance_formula(
    fh: &PoissonSolution,
    mu: &EmpiricalMeasure,
    noise: &StableNoise,
    quad: &QuadratureConfig,
) -> Result<VarianceEstimate> {
    if noise.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: noise.dim(),
        });
    }
    let xs = mu.values_1d()?;
    let spline = fh.spline()?;
    let inside = xs.iter().filter(|x| spline.contains(**x)).count() as f64 / xs.len() as f64;
    if inside < REQUIRED_COVERAGE {
        return Err(Error::Coverage {
            inside_fraction: inside,
            required: REQUIRED_COVERAGE,
        });
    }
    let r = quad.outer_radius;
    let near = JumpQuadrature::new(noise, quad)?;
    let far = JumpQuadrature::with_cutoffs(noise, quad, quad.inner_cutoff, 2.0 * r)?;
    let outer: Vec<f64> = mu.thinned(quad.max_outer_points).iter().map(|p| p[0]).collect();

    // (J(R), se, J(2R), se, extrapolated evaluations, total evaluations)
    let per_point = run_replicas(outer.len(), |i| {
        let outside = Cell::new(0u64);
        let total = Cell::new(0u64);
        let f = |y: &[f64]| {
            total.set(total.get() + 1);
            if !spline.contains(y[0]) {
                outside.set(outside.get() + 1);
            }
            spline.eval(y[0])
        };
        let x = [outer[i]];
        let fx = spline.eval(x[0]);
        let grad = fd_gradient(&|y| spline.eval(y[0]), &x);
        let a = near.carre_du_champ(&f, &x, fx, &grad);
        let b = far.carre_du_champ(&f, &x, fx, &grad);
        Ok((a, b, outside.get(), total.get()))
    })?;
    let ja: Vec<f64> = per_point.iter().map(|p| p.0.value).collect();
    let jb: Vec<f64> = per_point.iter().map(|p| p.1.value).collect();
    let quad_se_a = stats::mean(&per_point.iter().map(|p| p.0.stderr).collect::<Vec<_>>());
    let (va, se_a) = stats::mean_se(&ja);
    let (vb, _) = stats::mean_se(&jb);
    let outside: u64 = per_point.iter().map(|p| p.2).sum();
    let total: u64 = per_point.iter().map(|p| p.3).sum();

    let (diverged, exponent) = if va > 0.0 {
        (
            (vb - va) / va > quad.divergence_threshold,
            Some((vb / va).log2()),
        )
    } else {
        (false, None)
    };
    Ok(VarianceEstimate {
        diverged,
        truncation_radius: Some(r),
        value_at_double_radius: Some(vb),
        growth_exponent: exponent,
        inside_fraction: Some(inside),
        extrapolated_fraction: Some(outside as f64 / total.max(1) as f64),
        n_outer_points: Some(outer.len()),
        ..VarianceEstimate::blank(VarianceMethod::Formula, va, se_a.hypot(quad_se_a))
    })
}

/// Settings of [`variance_batch_means`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMeansConfig {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub burn_in: f64,
    pub dt: f64,
    pub n_batches: usize,
    pub scheme: Scheme,
}

impl BatchMeansConfig {
    pub fn new(dim: usize, horizon: f64, n_batches: usize) -> Self {
        Self {
            x0: vec![0.0; dim],
            horizon,
            burn_in: crate::sde::DEFAULT_BURN_IN_FRACTION * horizon,
            dt: crate::sde::DEFAULT_DT,
            n_batches,
            scheme: Scheme::TamedEuler,
        }
    }
}

pub const MIN_BATCHES: usize = 20;

/// `(block length) * (sample variance of block averages)` over one
/// post-burn-in trajectory, with a delete-one-block jackknife error.
pub fn variance_batch_means(
    model: &DriftModel,
    noise: &StableNoise,
    h: &TestFunction,
    cfg: &BatchMeansConfig,
    rng: &RngStream,
) -> Result<VarianceEstimate> {
    if cfg.n_batches < MIN_BATCHES {
        return Err(Error::Precondition(format!(
            "batch means needs at least {MIN_BATCHES} batches, got {}",
            cfg.n_batches
        )));
    }
    let sim = SimConfig {
        x0: cfg.x0.clone(),
        dt: cfg.dt,
        horizon: cfg.horizon,
        burn_in: cfg.burn_in,
        scheme: cfg.scheme,
    };
    sim.validate()?;
    if sim.x0.len() != noise.dim() {
        return Err(Error::Dimension {
            expected: noise.dim(),
            got: sim.x0.len(),
        });
    }
    let skip = sim.burn_in_steps();
    let usable = sim.n_steps() - skip;
    let block = usable / cfg.n_batches as u64;
    if block == 0 {
        return Err(Error::Precondition(
            "horizon too short for the requested number of batches".into(),
        ));
    }
    let mut r = rng.clone();
    let mut stepper = Stepper::new(model, noise, cfg.dt, cfg.scheme)?;
    let mut state = sim.x0.clone();
    for k in 1..=skip {
        stepper.step(&mut state, &mut r)?;
        check_finite(&state, k, cfg.dt)?;
    }
    let mut means = Vec::with_capacity(cfg.n_batches);
    let mut k = skip;
    for _ in 0..cfg.n_batches {
        let mut sum = 0.0;
        for _ in 0..block {
            stepper.step(&mut state, &mut r)?;
            k += 1;
            check_finite(&state, k, cfg.dt)?;
            sum += h.eval(&state);
        }
        means.push(sum / block as f64);
    }
    let length = block as f64 * cfg.dt;
    let value = length * stats::variance(&means);

    let n = means.len() as f64;
    let s1: f64 = means.iter().sum();
    let s2: f64 = means.iter().map(|m| m * m).sum();
    let leave_out: Vec<f64> = means
        .iter()
        .map(|m| {
            let a = s1 - m;
            let b = s2 - m * m;
            let k = n - 1.0;
            length * ((b - a * a / k) / (k - 1.0)).max(0.0)
        })
        .collect();
    let lo_mean = stats::mean(&leave_out);
    let jack = ((n - 1.0) / n * leave_out.iter().map(|v| (v - lo_mean).powi(2)).sum::<f64>()).sqrt();

    Ok(VarianceEstimate {
        horizon: Some(cfg.horizon),
        n_batches: Some(cfg.n_batches),
        block_length: Some(length),
        ..VarianceEstimate::blank(VarianceMethod::BatchMeans, value.max(0.0), jack)
    })
}

fn check_finite(state: &[f64], step: u64, dt: f64) -> Result<()> {
    if state.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::BlowUp {
            time: step as f64 * dt,
            step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ergodics::MeasureSource;
    use crate::poisson::PoissonGrid;
    use crate::sde::DriftKind;

    fn noise1() -> StableNoise {
        StableNoise::new(1.5, 1).unwrap()
    }

    fn measure(points: Vec<f64>) -> EmpiricalMeasure {
        let n = points.len();
        EmpiricalMeasure::new(
            1,
            points,
            vec![0, n],
            MeasureSource {
                drift_kind: DriftKind::PowerDrift,
                theta: 0.0,
                alpha: 1.5,
                horizon: 1.0,
                burn_in: 0.0,
                dt: 0.01,
                stride: 1,
                n_chains: 1,
                antithetic: false,
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_solution_has_zero_variance() {
        let grid = PoissonGrid::uniform(-3.0, 3.0, 31).unwrap();
        let fh = PoissonSolution::from_function(&grid, |_| 0.0, 0.0).unwrap();
        let mu = measure((0..100).map(|i| -2.0 + 0.04 * i as f64).collect());
        let v = variance_formula(&fh, &mu, &noise1(), &QuadratureConfig::default()).unwrap();
        assert_eq!(v.value, 0.0);
        assert!(!v.diverged);
    }

    #[test]
    fn linear_solution_diverges_with_known_exponent() {
        let grid = PoissonGrid::uniform(-3.0, 3.0, 31).unwrap();
        let fh = PoissonSolution::from_function(&grid, |x| -x, 0.0).unwrap();
        let mu = measure((0..100).map(|i| -2.0 + 0.04 * i as f64).collect());
        let v = variance_formula(&fh, &mu, &noise1(), &QuadratureConfig::default()).unwrap();
        assert!(v.diverged);
        let e = v.growth_exponent.unwrap();
        assert!((e - 0.5).abs() < 0.15, "{e}");
    }

    #[test]
    fn coverage_is_enforced() {
        let grid = PoissonGrid::uniform(-1.0, 1.0, 11).unwrap();
        let fh = PoissonSolution::from_function(&grid, |x| x, 0.0).unwrap();
        let mu = measure((0..100).map(|i| i as f64 * 0.1).collect());
        let r = variance_formula(&fh, &mu, &noise1(), &QuadratureConfig::default());
        assert!(matches!(r, Err(Error::Coverage { .. })));
    }

    #[test]
    fn batch_means_of_constant_is_zero() {
        let model = DriftModel::power(0.6).unwrap();
        let cfg = BatchMeansConfig::new(1, 50.0, 20);
        let v = variance_batch_means(
            &model,
            &noise1(),
            &TestFunction::constant(3.0),
            &cfg,
            &RngStream::new(1, 0),
        )
        .unwrap();
        assert!(v.value.abs() < 1e-20);
    }

    #[test]
    fn batch_means_needs_twenty_batches() {
        let model = DriftModel::power(0.6).unwrap();
        let cfg = BatchMeansConfig::new(1, 50.0, 19);
        let r = variance_batch_means(
            &model,
            &noise1(),
            &TestFunction::sin(),
            &cfg,
            &RngStream::new(1, 0),
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn estimate_serializes_every_field() {
        let v = VarianceEstimate::blank(VarianceMethod::BatchMeans, 1.0, 0.1);
        let json = serde_json::to_value(&v).unwrap();
        for key in ["value", "stderr", "method", "diverged", "truncation_radius"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
