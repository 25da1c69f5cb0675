//! Distributional limit tests for scaled additive functionals
//! `t^{-gamma} int_0^t [h(X_s) - center] ds`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{stable_cdf_1d, stable_cf, StableNoise};
use crate::quadrature::QuadratureConfig;
use crate::rng::RngStream;
use crate::sde::{run_replicas, steps_for, DriftModel, Scheme, Stepper, TestFunction};
use crate::stats;

const REPLICA_TAG: u64 = 0x1a7a_0301;
const SCAN_TAG: u64 = 0x1a7a_0302;
const BOOTSTRAP_TAG: u64 = 0x1a7a_0303;

pub const MIN_REPLICAS: usize = 100;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// One scaled functional per replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledSample {
    pub gamma: f64,
    pub t: f64,
    pub values: Vec<f64>,
    pub center: f64,
}

impl ScaledSample {
    pub fn from_values(values: Vec<f64>, gamma: f64, t: f64, center: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("scaled sample values must be finite".into()));
        }
        Ok(Self {
            gamma,
            t,
            values,
            center,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with a single `value` column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "value")?;
        for v in &self.values {
            writeln!(w, "{v:e}")?;
        }
        Ok(())
    }
}

/// Law the scaled sample is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum LimitTarget {
    Gaussian { variance: f64 },
    /// Characteristic function `exp(-(scale |xi|)^alpha)`.
    Stable { alpha: f64, scale: f64 },
}

impl LimitTarget {
    pub fn cf(&self, xi: f64) -> Result<f64> {
        match *self {
            LimitTarget::Gaussian { variance } => Ok((-0.5 * variance * xi * xi).exp()),
            LimitTarget::Stable { alpha, scale } => stable_cf(alpha, scale, xi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Consistent,
    Rejected,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitTest {
    KolmogorovSmirnov,
    CfDistance,
}

/// Outcome of a limit test. `p_value_or_threshold` is the critical value
/// the statistic was compared with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitVerdict {
    pub target: LimitTarget,
    pub test: LimitTest,
    pub statistic: f64,
    pub p_value_or_threshold: f64,
    /// Asymptotic Kolmogorov p-value, for KS tests only.
    pub p_value: Option<f64>,
    pub decision: Decision,
    pub n: usize,
    pub label: Option<String>,
}

/// Where replicas start and how they are stepped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaConfig {
    pub x0: Vec<f64>,
    pub dt: f64,
    pub scheme: Scheme,
}

impl ReplicaConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            x0: vec![0.0; dim],
            dt: crate::sde::DEFAULT_DT,
            scheme: Scheme::TamedEuler,
        }
    }
}

/// Riemann sums `sum_k (h(X_k) - center) dt` of one path, recorded at each
/// of the (increasing) step counts in `marks`.
fn path_integrals(
    model: &DriftModel,
    noise: &StableNoise,
    h: &TestFunction,
    center: f64,
    cfg: &ReplicaConfig,
    marks: &[u64],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut stepper = Stepper::new(model, noise, cfg.dt, cfg.scheme)?;
    let mut state = cfg.x0.clone();
    let mut out = Vec::with_capacity(marks.len());
    let mut sum = 0.0;
    let mut k = 0u64;
    for &m in marks {
        while k < m {
            stepper.step(&mut state, rng)?;
            k += 1;
            if !state.iter().all(|v| v.is_finite()) {
                return Err(Error::BlowUp {
                    time: k as f64 * cfg.dt,
                    step: k,
                });
            }
            sum += h.eval(&state) - center;
        }
        out.push(sum * cfg.dt);
    }
    Ok(out)
}

fn check_replica_config(noise: &StableNoise, cfg: &ReplicaConfig) -> Result<()> {
    if cfg.x0.len() != noise.dim() {
        return Err(Error::Dimension {
            expected: noise.dim(),
            got: cfg.x0.len(),
        });
    }
    if !(cfg.dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {}", cfg.dt)));
    }
    Ok(())
}

/// `n_replicas` independent paths from `cfg.x0`, each giving
/// `t^{-gamma} sum_k (h(X_k) - center) dt`.
#[allow(clippy::too_many_arguments)]
pub fn replicate_scaled_statistic(
    model: &DriftModel,
    noise: &StableNoise,
    h: &TestFunction,
    gamma: f64,
    t: f64,
    n_replicas: usize,
    center: f64,
    cfg: &ReplicaConfig,
    rng: &RngStream,
) -> Result<ScaledSample> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    if n_replicas < MIN_REPLICAS {
        return Err(Error::Precondition(format!(
            "need at least {MIN_REPLICAS} replicas, got {n_replicas}"
        )));
    }
    check_replica_config(noise, cfg)?;
    let marks = [steps_for(t, cfg.dt)];
    let scale = t.powf(-gamma);
    let values = run_replicas(n_replicas, |i| {
        let mut r = rng.fork(REPLICA_TAG, i as u64);
        Ok(scale * path_integrals(model, noise, h, center, cfg, &marks, &mut r)?[0])
    })?;
    ScaledSample::from_values(values, gamma, t, center)
}

/// Asymptotic Kolmogorov tail `P(sqrt(n) D > lambda)`.
pub fn kolmogorov_p_value(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

fn ks_verdict(target: LimitTarget, d: f64, n: usize) -> LimitVerdict {
    let critical = stats::KS_CRIT_1PCT / (n as f64).sqrt();
    LimitVerdict {
        target,
        test: LimitTest::KolmogorovSmirnov,
        statistic: d,
        p_value_or_threshold: critical,
        p_value: Some(kolmogorov_p_value(d * (n as f64).sqrt())),
        decision: if d < critical {
            Decision::Consistent
        } else {
            Decision::Rejected
        },
        n,
        label: None,
    }
}

fn check_sample(sample: &ScaledSample) -> Result<()> {
    if sample.len() < MIN_REPLICAS {
        return Err(Error::Precondition(format!(
            "limit tests need at least {MIN_REPLICAS} values, got {}",
            sample.len()
        )));
    }
    Ok(())
}

/// One-sample KS test against `N(0, variance)` at the 1% level.
pub fn ks_gaussian_test(sample: &ScaledSample, variance: f64) -> Result<LimitVerdict> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Domain(format!(
            "variance must be positive and finite, got {variance}"
        )));
    }
    check_sample(sample)?;
    let sd = variance.sqrt();
    let standardized: Vec<f64> = sample.values.iter().map(|v| v / sd).collect();
    let d = stats::ks_statistic(&standardized, stats::normal_cdf);
    Ok(ks_verdict(
        LimitTarget::Gaussian { variance },
        d,
        sample.len(),
    ))
}

/// One-sample KS test against the symmetric stable law with characteristic
/// function `exp(-(scale |xi|)^alpha)`, at the 1% level.
pub fn ks_stable_test(
    sample: &ScaledSample,
    alpha: f64,
    scale: f64,
    quad: &QuadratureConfig,
) -> Result<LimitVerdict> {
    if !(scale > 0.0) {
        return Err(Error::Domain(format!("scale must be positive, got {scale}")));
    }
    check_sample(sample)?;
    let sorted = stats::sorted(&sample.values);
    let cdf = run_replicas(sorted.len(), |i| stable_cdf_1d(alpha, sorted[i] / scale, quad))?;
    let n = sorted.len() as f64;
    let d = cdf
        .iter()
        .enumerate()
        .map(|(i, &f)| (f - i as f64 / n).max((i + 1) as f64 / n - f))
        .fold(0.0, f64::max);
    Ok(ks_verdict(
        LimitTarget::Stable { alpha, scale },
        d,
        sample.len(),
    ))
}

/// `max_xi |empirical CF - target CF|`; consistent below `3 sqrt(2/n)`,
/// rejected above `6 sqrt(2/n)`, inconclusive in between.
pub fn cf_distance_test(
    sample: &ScaledSample,
    target: &LimitTarget,
    xi_grid: &[f64],
) -> Result<LimitVerdict> {
    if xi_grid.is_empty() {
        return Err(Error::Empty("xi_grid"));
    }
    check_sample(sample)?;
    let mut d: f64 = 0.0;
    for &xi in xi_grid {
        let (re, im) = stats::empirical_cf(&sample.values, xi);
        let tcf = target.cf(xi)?;
        d = d.max((re - tcf).hypot(im));
    }
    let n = sample.len() as f64;
    let low = 3.0 * (2.0 / n).sqrt();
    let high = 6.0 * (2.0 / n).sqrt();
    Ok(LimitVerdict {
        target: *target,
        test: LimitTest::CfDistance,
        statistic: d,
        p_value_or_threshold: low,
        p_value: None,
        decision: if d < low {
            Decision::Consistent
        } else if d > high {
            Decision::Rejected
        } else {
            Decision::Inconclusive
        },
        n: sample.len(),
        label: None,
    })
}

/// Least-squares slope of `log IQR` against `log t`, bootstrap error, and
/// the raw per-`t` interquartile ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub gamma_hat: f64,
    pub stderr: f64,
    pub t_grid: Vec<f64>,
    pub iqrs: Vec<f64>,
    pub n_replicas: usize,
}

/// Slope and its regression standard error for `log iqr = a + gamma log t`.
pub fn fit_scaling_exponent(t_grid: &[f64], iqrs: &[f64]) -> Result<(f64, f64)> {
    if t_grid.len() != iqrs.len() || t_grid.len() < 2 {
        return Err(Error::Precondition("need matching t and IQR lists of length >= 2".into()));
    }
    if iqrs.iter().chain(t_grid).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("times and IQRs must be positive".into()));
    }
    let lt: Vec<f64> = t_grid.iter().map(|t| t.ln()).collect();
    let li: Vec<f64> = iqrs.iter().map(|q| q.ln()).collect();
    let (_, slope, se) = stats::linear_fit(&lt, &li);
    Ok((slope, se))
}

/// Scaling exponent of the unscaled functional `int_0^t [h - center] ds`.
/// Each replica is one path observed at every `t` in the grid; the
/// bootstrap resamples whole replicas, so the reported error accounts for
/// the dependence between times.
#[allow(clippy::too_many_arguments)]
pub fn scaling_exponent_scan(
    model: &DriftModel,
    noise: &StableNoise,
    h: &TestFunction,
    t_grid: &[f64],
    n_replicas: usize,
    center: f64,
    cfg: &ReplicaConfig,
    rng: &RngStream,
) -> Result<ScanResult> {
    if t_grid.len() < 4 {
        return Err(Error::Precondition("t_grid needs at least 4 points".into()));
    }
    if t_grid.iter().any(|t| !(*t > 0.0)) || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition(
            "t_grid must be positive and strictly increasing".into(),
        ));
    }
    if t_grid[t_grid.len() - 1] / t_grid[0] < 8.0 {
        return Err(Error::Precondition("t_grid must span at least a factor of 8".into()));
    }
    if n_replicas < MIN_REPLICAS {
        return Err(Error::Precondition(format!(
            "need at least {MIN_REPLICAS} replicas, got {n_replicas}"
        )));
    }
    check_replica_config(noise, cfg)?;
    let marks: Vec<u64> = t_grid.iter().map(|t| steps_for(*t, cfg.dt)).collect();
    if marks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("t_grid points collapse at this dt".into()));
    }
    let paths = run_replicas(n_replicas, |i| {
        let mut r = rng.fork(SCAN_TAG, i as u64);
        path_integrals(model, noise, h, center, cfg, &marks, &mut r)
    })?;
    let column = |j: usize, idx: &mut dyn Iterator<Item = usize>| -> Vec<f64> {
        idx.map(|i| paths[i][j]).collect()
    };
    let iqrs: Vec<f64> = (0..t_grid.len())
        .map(|j| stats::iqr(&column(j, &mut (0..n_replicas))))
        .collect();
    let (gamma_hat, _) = fit_scaling_exponent(t_grid, &iqrs)?;

    let mut boot_rng = rng.fork(BOOTSTRAP_TAG, 0);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let pick: Vec<usize> = (0..n_replicas)
            .map(|_| boot_rng.random_range(0..n_replicas))
            .collect();
        let q: Vec<f64> = (0..t_grid.len())
            .map(|j| stats::iqr(&column(j, &mut pick.iter().copied())))
            .collect();
        if let Ok((s, _)) = fit_scaling_exponent(t_grid, &q) {
            slopes.push(s);
        }
    }
    let stderr = if slopes.len() >= 2 {
        stats::variance(&slopes).sqrt()
    } else {
        f64::NAN
    };
    Ok(ScanResult {
        gamma_hat,
        stderr,
        t_grid: t_grid.to_vec(),
        iqrs,
        n_replicas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_sample(seed: u64, n: usize, shift: f64) -> ScaledSample {
        let mut r = RngStream::new(seed, 0);
        let v: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                shift + z
            })
            .collect();
        ScaledSample::from_values(v, 0.5, 1.0, 0.0).unwrap()
    }

    #[test]
    fn kolmogorov_tail_values() {
        assert!((kolmogorov_p_value(1.628) - 0.01).abs() < 5e-4);
        assert!((kolmogorov_p_value(1.358) - 0.05).abs() < 1e-3);
        assert_eq!(kolmogorov_p_value(0.0), 1.0);
    }

    #[test]
    fn ks_accepts_gaussian_and_rejects_shift() {
        let ok = ks_gaussian_test(&gaussian_sample(1, 2000, 0.0), 1.0).unwrap();
        assert_eq!(ok.decision, Decision::Consistent);
        let bad = ks_gaussian_test(&gaussian_sample(2, 2000, 1.0), 1.0).unwrap();
        assert_eq!(bad.decision, Decision::Rejected);
        assert!(bad.statistic > bad.p_value_or_threshold);
        assert!((bad.statistic - 0.383).abs() < 0.05);
    }

    #[test]
    fn ks_rejects_degenerate_inputs() {
        let empty = ScaledSample::from_values(vec![], 0.5, 1.0, 0.0).unwrap();
        assert!(matches!(ks_gaussian_test(&empty, 1.0), Err(Error::Precondition(_))));
        let s = gaussian_sample(3, 200, 0.0);
        assert!(matches!(ks_gaussian_test(&s, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cf_distance_cases() {
        let s = gaussian_sample(4, 2000, 0.0);
        let stable = LimitTarget::Stable {
            alpha: 1.5,
            scale: 1.0,
        };
        // At xi = 2 the gap is e^-2 - e^-(2^1.5) = 0.076, below 3 sqrt(2/2000);
        // at xi = 1 it is 0.239, above 6 sqrt(2/2000).
        let v = cf_distance_test(&s, &stable, &[2.0]).unwrap();
        assert_ne!(v.decision, Decision::Rejected);
        let v = cf_distance_test(&s, &stable, &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(v.decision, Decision::Rejected);
        let big = gaussian_sample(5, 20_000, 0.0);
        let v = cf_distance_test(&big, &stable, &[2.0]).unwrap();
        assert_eq!(v.decision, Decision::Rejected);
        let zero = cf_distance_test(&s, &stable, &[0.0]).unwrap();
        assert!(zero.statistic.abs() < 1e-12);
        assert_eq!(zero.decision, Decision::Consistent);
        let gauss = LimitTarget::Gaussian { variance: 1.0 };
        let g = cf_distance_test(&s, &gauss, &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(g.decision, Decision::Consistent);
        assert!(cf_distance_test(&s, &gauss, &[]).is_err());
    }

    #[test]
    fn synthetic_power_law_slope() {
        let t = [64.0, 128.0, 256.0, 512.0];
        let q: Vec<f64> = t.iter().map(|x| 0.3 * x).collect();
        let (slope, _) = fit_scaling_exponent(&t, &q).unwrap();
        assert!((slope - 1.0).abs() < 0.05);
    }

    #[test]
    fn constant_observable_at_center_gives_zeros() {
        let model = DriftModel::power(0.0).unwrap();
        let noise = StableNoise::new(1.5, 1).unwrap();
        let s = replicate_scaled_statistic(
            &model,
            &noise,
            &TestFunction::constant(0.7),
            0.5,
            1.0,
            100,
            0.7,
            &ReplicaConfig::new(1),
            &RngStream::new(1, 0),
        )
        .unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scan_preconditions() {
        let model = DriftModel::power(0.0).unwrap();
        let noise = StableNoise::new(1.5, 1).unwrap();
        let h = TestFunction::identity();
        let cfg = ReplicaConfig::new(1);
        let rng = RngStream::new(1, 0);
        for grid in [vec![1.0, 2.0, 4.0], vec![1.0, 2.0, 3.0, 4.0]] {
            let r = scaling_exponent_scan(&model, &noise, &h, &grid, 100, 0.0, &cfg, &rng);
            assert!(matches!(r, Err(Error::Precondition(_))));
        }
        let r = replicate_scaled_statistic(&model, &noise, &h, 0.5, 1.0, 99, 0.0, &cfg, &rng);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
