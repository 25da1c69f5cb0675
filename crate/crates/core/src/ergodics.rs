//! Invariant-measure sampling, Wasserstein-1 contraction and moment
//! diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::StableNoise;
use crate::rng::RngStream;
use crate::sde::{
    norm, run_replicas, steps_for, DriftKind, DriftModel, Scheme, SimConfig, Stepper, TestFunction,
};
use crate::stats;

const CHAIN_TAG: u64 = 0x1a7a_0001;
const MOMENT_TAG: u64 = 0x1a7a_0002;
const W1_TAG: u64 = 0x1a7a_0003;

/// Where a sample set came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSource {
    pub drift_kind: DriftKind,
    pub theta: f64,
    pub alpha: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub dt: f64,
    pub stride: usize,
    pub n_chains: usize,
    pub antithetic: bool,
}

/// Finite sample approximation of the invariant law.
///
/// Points are stored row-major. `unit_offsets` marks the boundaries of the
/// independent sampling units (single chains, or antithetic chain pairs),
/// which is what standard errors are computed over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    unit_offsets: Vec<usize>,
    pub source: MeasureSource,
}

impl EmpiricalMeasure {
    pub fn new(
        dim: usize,
        points: Vec<f64>,
        unit_offsets: Vec<usize>,
        source: MeasureSource,
    ) -> Result<Self> {
        if dim == 0 || points.is_empty() {
            return Err(Error::Empty("empirical measure points"));
        }
        if points.len() % dim != 0 {
            return Err(Error::Dimension {
                expected: dim,
                got: points.len() % dim,
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("empirical measure points must be finite".into()));
        }
        Ok(Self {
            dim,
            points,
            unit_offsets,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Coordinate values of a one-dimensional measure.
    pub fn values_1d(&self) -> Result<&[f64]> {
        if self.dim != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: self.dim,
            });
        }
        Ok(&self.points)
    }

    /// `mu(h)` with a standard error computed over independent units.
    pub fn mean_of(&self, h: &TestFunction) -> (f64, f64) {
        self.mean_of_fn(|x| h.eval(x))
    }

    pub fn mean_of_fn<F: Fn(&[f64]) -> f64>(&self, f: F) -> (f64, f64) {
        let values: Vec<f64> = self.iter().map(&f).collect();
        let mean = stats::mean(&values);
        let units: Vec<f64> = self
            .unit_offsets
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| stats::mean(&values[w[0]..w[1]]))
            .collect();
        let se = if units.len() >= 2 {
            stats::std_error(&units)
        } else {
            stats::std_error(&values)
        };
        (mean, se)
    }

    /// Evenly strided subset with at most `max` points.
    pub fn thinned(&self, max: usize) -> Vec<&[f64]> {
        let n = self.len();
        let step = n.div_ceil(max.max(1)).max(1);
        (0..n).step_by(step).map(|i| self.point(i)).collect()
    }

    /// CSV with header `x1,...,xd`, one row per point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for p in self.iter() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Settings of [`sample_invariant`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantConfig {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub burn_in: f64,
    pub stride: usize,
    pub n_chains: usize,
    pub scheme: Scheme,
    /// Run chains in pairs driven by negated noise.
    pub antithetic: bool,
}

pub const DEFAULT_STRIDE: usize = 10;

impl InvariantConfig {
    pub fn new(dim: usize, horizon: f64, n_chains: usize) -> Self {
        Self {
            x0: vec![0.0; dim],
            horizon,
            dt: crate::sde::DEFAULT_DT,
            burn_in: crate::sde::DEFAULT_BURN_IN_FRACTION * horizon,
            stride: DEFAULT_STRIDE,
            n_chains,
            scheme: Scheme::TamedEuler,
            antithetic: true,
        }
    }

    fn sim(&self) -> SimConfig {
        SimConfig {
            x0: self.x0.clone(),
            dt: self.dt,
            horizon: self.horizon,
            burn_in: self.burn_in,
            scheme: self.scheme,
        }
    }
}

/// Samples the invariant law from `n_chains` paths, keeping every
/// `stride`-th post-burn-in state. With `antithetic` set, chain `2k+1`
/// replays the stream of chain `2k` with negated increments.
pub fn sample_invariant(
    model: &DriftModel,
    noise: &StableNoise,
    cfg: &InvariantConfig,
    rng: &RngStream,
) -> Result<EmpiricalMeasure> {
    if cfg.stride == 0 {
        return Err(Error::Precondition("stride must be at least 1".into()));
    }
    if cfg.n_chains == 0 {
        return Err(Error::Precondition("n_chains must be at least 1".into()));
    }
    let sim = cfg.sim();
    sim.validate()?;
    if sim.x0.len() != noise.dim() {
        return Err(Error::Dimension {
            expected: noise.dim(),
            got: sim.x0.len(),
        });
    }
    let skip = sim.burn_in_steps();
    let n_steps = sim.n_steps();
    let stride = cfg.stride as u64;
    let chains = run_replicas(cfg.n_chains, |c| {
        let (stream, mirror) = if cfg.antithetic {
            (c as u64 / 2, c % 2 == 1)
        } else {
            (c as u64, false)
        };
        let mut r = rng.fork(CHAIN_TAG, stream);
        let mut stepper = Stepper::new(model, noise, sim.dt, sim.scheme)?.mirrored(mirror);
        let mut state = sim.x0.clone();
        let kept = (n_steps.saturating_sub(skip) / stride + 1) as usize;
        let mut out = Vec::with_capacity(kept * state.len());
        for k in 1..=n_steps {
            stepper.step(&mut state, &mut r)?;
            if !state.iter().all(|v| v.is_finite()) {
                return Err(Error::BlowUp {
                    time: k as f64 * sim.dt,
                    step: k,
                });
            }
            if k > skip && (k - skip) % stride == 0 {
                out.extend_from_slice(&state);
            }
        }
        Ok(out)
    })?;
    let dim = noise.dim();
    let mut points = Vec::new();
    let mut offsets = vec![0usize];
    for (c, chunk) in chains.into_iter().enumerate() {
        points.extend(chunk);
        let closes_unit = !cfg.antithetic || c % 2 == 1 || c + 1 == cfg.n_chains;
        if closes_unit {
            offsets.push(points.len() / dim);
        }
    }
    if points.is_empty() {
        return Err(Error::Precondition(
            "no points recorded: horizon too short for burn-in and stride".into(),
        ));
    }
    EmpiricalMeasure::new(
        dim,
        points,
        offsets,
        MeasureSource {
            drift_kind: model.kind(),
            theta: model.theta(),
            alpha: noise.alpha(),
            horizon: cfg.horizon,
            burn_in: cfg.burn_in,
            dt: cfg.dt,
            stride: cfg.stride,
            n_chains: cfg.n_chains,
            antithetic: cfg.antithetic,
        },
    )
}

/// Exact W1 distance between two one-dimensional empirical laws,
/// `int |F_a - F_b| dx` over the merged order statistics.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein1_1d input"));
    }
    let sa = stats::sorted(a);
    let sb = stats::sorted(b);
    let (na, nb) = (sa.len(), sb.len());
    if na == nb {
        let n = na as f64;
        return Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n);
    }
    let (mut i, mut j) = (0, 0);
    let mut prev = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < na || j < nb {
        let x = if j == nb || (i < na && sa[i] <= sb[j]) {
            sa[i]
        } else {
            sb[j]
        };
        let gap = (i as f64 / na as f64 - j as f64 / nb as f64).abs();
        total += gap * (x - prev);
        while i < na && sa[i] == x {
            i += 1;
        }
        while j < nb && sb[j] == x {
            j += 1;
        }
        prev = x;
    }
    Ok(total)
}

/// W1 between two measures; only one-dimensional measures are supported.
pub fn wasserstein1_measures(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    wasserstein1_1d(a.values_1d()?, b.values_1d()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub scheme: Scheme,
}

/// Monte Carlo table of `E|X_t^x|^beta`; rows are start points, columns times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub beta: f64,
    pub times: Vec<f64>,
    pub start_points: Vec<Vec<f64>>,
    pub estimates: Vec<Vec<f64>>,
    pub standard_errors: Vec<Vec<f64>>,
}

impl MomentReport {
    /// `estimate / (1 + |x|^beta)` per cell: the smallest constant
    /// consistent with `E|X_t^x|^beta <= C (1 + |x|^beta)`.
    pub fn bound_constants(&self) -> Vec<Vec<f64>> {
        self.start_points
            .iter()
            .zip(&self.estimates)
            .map(|(x, row)| {
                let denom = 1.0 + norm(x).powf(self.beta);
                row.iter().map(|e| e / denom).collect()
            })
            .collect()
    }
}

/// Records the state of each path at the requested step indices.
fn record_at_steps(
    model: &DriftModel,
    noise: &StableNoise,
    cfg: &MomentConfig,
    x0: &[f64],
    steps: &[u64],
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    let max_step = steps.iter().copied().max().unwrap_or(0);
    let mut stepper = Stepper::new(model, noise, cfg.dt, cfg.scheme)?;
    let mut state = x0.to_vec();
    let mut out = vec![Vec::new(); steps.len()];
    for k in 1..=max_step {
        stepper.step(&mut state, rng)?;
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp {
                time: k as f64 * cfg.dt,
                step: k,
            });
        }
        for (slot, &s) in out.iter_mut().zip(steps) {
            if s == k {
                *slot = state.clone();
            }
        }
    }
    Ok(out)
}

/// Paths from different start points use independent streams.
pub fn moment_probe(
    model: &DriftModel,
    noise: &StableNoise,
    beta: f64,
    times: &[f64],
    starts: &[Vec<f64>],
    cfg: &MomentConfig,
    rng: &RngStream,
) -> Result<MomentReport> {
    if !(beta >= 1.0 && beta < noise.alpha()) {
        return Err(Error::Domain(format!(
            "moment order must satisfy 1 <= beta < alpha = {}, got {beta}",
            noise.alpha()
        )));
    }
    if times.is_empty() || starts.is_empty() {
        return Err(Error::Empty("moment_probe times/starts"));
    }
    if cfg.n_paths < 2 {
        return Err(Error::Precondition("n_paths must be at least 2".into()));
    }
    if times.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Domain("times must be positive".into()));
    }
    let steps: Vec<u64> = times.iter().map(|t| steps_for(*t, cfg.dt)).collect();
    let mut estimates = Vec::with_capacity(starts.len());
    let mut errors = Vec::with_capacity(starts.len());
    for (si, x0) in starts.iter().enumerate() {
        if x0.len() != noise.dim() {
            return Err(Error::Dimension {
                expected: noise.dim(),
                got: x0.len(),
            });
        }
        let base = rng.fork(MOMENT_TAG, si as u64);
        let samples = run_replicas(cfg.n_paths, |p| {
            let mut r = base.fork(MOMENT_TAG, p as u64);
            let states = record_at_steps(model, noise, cfg, x0, &steps, &mut r)?;
            Ok(states.iter().map(|s| norm(s).powf(beta)).collect::<Vec<f64>>())
        })?;
        let mut row = Vec::with_capacity(times.len());
        let mut err_row = Vec::with_capacity(times.len());
        for j in 0..times.len() {
            let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let (m, se) = stats::mean_se(&col);
            row.push(m);
            err_row.push(se);
        }
        estimates.push(row);
        errors.push(err_row);
    }
    Ok(MomentReport {
        beta,
        times: times.to_vec(),
        start_points: starts.to_vec(),
        estimates,
        standard_errors: errors,
    })
}

/// W1 distance between the time-`t` laws of paths started at two points,
/// with the least-squares slope of `log W1` against `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W1Decay {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub log_slope: f64,
    pub log_slope_stderr: f64,
}

/// The two start points use independent streams.
pub fn w1_decay(
    model: &DriftModel,
    noise: &StableNoise,
    start_a: f64,
    start_b: f64,
    times: &[f64],
    cfg: &MomentConfig,
    rng: &RngStream,
) -> Result<W1Decay> {
    if noise.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: noise.dim(),
        });
    }
    if times.len() < 2 {
        return Err(Error::Precondition("need at least two times".into()));
    }
    let steps: Vec<u64> = times.iter().map(|t| steps_for(*t, cfg.dt)).collect();
    let run = |x0: f64, tag: u64| -> Result<Vec<Vec<f64>>> {
        let base = rng.fork(W1_TAG, tag);
        run_replicas(cfg.n_paths, |p| {
            let mut r = base.fork(W1_TAG, p as u64);
            let states = record_at_steps(model, noise, cfg, &[x0], &steps, &mut r)?;
            Ok(states.iter().map(|s| s[0]).collect())
        })
    };
    let a = run(start_a, 0)?;
    let b = run(start_b, 1)?;
    let mut distances = Vec::with_capacity(times.len());
    for j in 0..times.len() {
        let ca: Vec<f64> = a.iter().map(|s| s[j]).collect();
        let cb: Vec<f64> = b.iter().map(|s| s[j]).collect();
        distances.push(wasserstein1_1d(&ca, &cb)?);
    }
    let logs: Vec<f64> = distances.iter().map(|d| d.max(1e-300).ln()).collect();
    let (_, slope, se) = stats::linear_fit(times, &logs);
    Ok(W1Decay {
        times: times.to_vec(),
        distances,
        log_slope: slope,
        log_slope_stderr: se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source() -> MeasureSource {
        MeasureSource {
            drift_kind: DriftKind::PowerDrift,
            theta: 0.0,
            alpha: 1.5,
            horizon: 1.0,
            burn_in: 0.0,
            dt: 0.1,
            stride: 1,
            n_chains: 1,
            antithetic: false,
        }
    }

    #[test]
    fn w1_hand_cases() {
        let a = [0.3, -1.0, 2.0];
        assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(wasserstein1_1d(&[], &[1.0]), Err(Error::Empty(_))));
    }

    #[test]
    fn w1_unequal_lengths_integrate_cdf_gap() {
        // Each block [10k, 10k + 10) contributes (1+2+3+4+5+4+3+2+1)/100.
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| 10.0 * i as f64 + 5.0).collect();
        assert!((wasserstein1_1d(&a, &b).unwrap() - 2.5).abs() < 1e-12);
        assert!((wasserstein1_1d(&b, &a).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn measure_rejects_bad_points() {
        assert!(EmpiricalMeasure::new(1, vec![], vec![0], source()).is_err());
        assert!(EmpiricalMeasure::new(1, vec![f64::NAN], vec![0, 1], source()).is_err());
        assert!(EmpiricalMeasure::new(2, vec![1.0, 2.0, 3.0], vec![0, 1], source()).is_err());
        let m = EmpiricalMeasure::new(2, vec![1.0, 2.0, 3.0, 4.0], vec![0, 2], source()).unwrap();
        assert!(matches!(
            wasserstein1_measures(&m, &m),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let m = EmpiricalMeasure::new(2, vec![1.0, 2.0, 3.0, 4.0], vec![0, 2], source()).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("x1,x2"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn sampler_preconditions() {
        let model = DriftModel::power(0.0).unwrap();
        let noise = StableNoise::new(1.5, 1).unwrap();
        let rng = RngStream::new(1, 0);
        let mut cfg = InvariantConfig::new(1, 10.0, 2);
        cfg.stride = 0;
        assert!(matches!(
            sample_invariant(&model, &noise, &cfg, &rng),
            Err(Error::Precondition(_))
        ));
        cfg.stride = 1;
        cfg.n_chains = 0;
        assert!(sample_invariant(&model, &noise, &cfg, &rng).is_err());
    }

    #[test]
    fn antithetic_pairs_give_symmetric_measure_for_odd_drift() {
        let model = DriftModel::power(0.6).unwrap();
        let noise = StableNoise::new(1.5, 1).unwrap();
        let cfg = InvariantConfig::new(1, 20.0, 4);
        let mu = sample_invariant(&model, &noise, &cfg, &RngStream::new(4, 0)).unwrap();
        let (m, _) = mu.mean_of(&TestFunction::identity());
        assert!(m.abs() < 1e-12, "{m}");
        assert_eq!(mu.unit_offsets.len(), 3);
    }

    #[test]
    fn moment_probe_rejects_beta_outside_range() {
        let model = DriftModel::power(0.0).unwrap();
        let noise = StableNoise::new(1.5, 1).unwrap();
        let cfg = MomentConfig {
            dt: 0.01,
            n_paths: 10,
            scheme: Scheme::TamedEuler,
        };
        let rng = RngStream::new(1, 0);
        for beta in [1.5, 0.5] {
            let r = moment_probe(&model, &noise, beta, &[1.0], &[vec![0.0]], &cfg, &rng);
            assert!(matches!(r, Err(Error::Domain(_))));
        }
    }
}
