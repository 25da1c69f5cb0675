//! Monte Carlo solution of the Poisson equation `A f = h - mu(h)` on a
//! one-dimensional grid, through `f(x) = -int_0^T E[h(X_t^x) - mu(h)] dt`.
//!
//! Every grid point is driven by the same noise (common random numbers),
//! so the tabulated solution is smooth in `x` and can be differentiated by
//! the generator. Paths come in antithetic pairs by default.

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ergodics::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::jumps::Generator;
use crate::noise::StableNoise;
use crate::quadrature::QuadratureConfig;
use crate::rng::RngStream;
use crate::sde::{run_replicas, steps_for, DriftModel, Scheme, Stepper, TestFunction};
use crate::spline::CubicSpline;
use crate::stats;

const POISSON_TAG: u64 = 0x1a7a_0201;

pub const DEFAULT_GRID_POINTS: usize = 201;
pub const DEFAULT_GRID_QUANTILES: (f64, f64) = (0.005, 0.995);

/// Nodes of a Poisson solution. `core_lo..=core_hi` is the uniform part;
/// nodes outside it are far-field wings that keep jump integrals from
/// relying on extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonGrid {
    pub nodes: Vec<f64>,
    pub core_lo: f64,
    pub core_hi: f64,
}

impl PoissonGrid {
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Precondition(format!(
                "uniform grid needs n >= 2 and finite lo < hi, got n={n}, [{lo}, {hi}]"
            )));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
        nodes[n - 1] = hi;
        Ok(Self {
            nodes,
            core_lo: lo,
            core_hi: hi,
        })
    }

    /// Uniform grid over the `[q_lo, q_hi]` quantile range of a
    /// one-dimensional measure.
    pub fn from_measure(mu: &EmpiricalMeasure, n: usize, q_lo: f64, q_hi: f64) -> Result<Self> {
        if !(0.0 <= q_lo && q_lo < q_hi && q_hi <= 1.0) {
            return Err(Error::Precondition(format!(
                "quantiles must satisfy 0 <= q_lo < q_hi <= 1, got {q_lo}, {q_hi}"
            )));
        }
        let sorted = stats::sorted(mu.values_1d()?);
        Self::uniform(
            stats::quantile_sorted(&sorted, q_lo),
            stats::quantile_sorted(&sorted, q_hi),
            n,
        )
    }

    /// Adds `n` nodes on each side, geometrically spaced from twice the
    /// core spacing out to `extent` beyond the core edge.
    pub fn with_wings(mut self, n: usize, extent: f64) -> Result<Self> {
        if n == 0 {
            return Ok(self);
        }
        let h = (self.core_hi - self.core_lo) / (self.core_len() - 1).max(1) as f64;
        let first = 2.0 * h;
        if !(extent > first) {
            return Err(Error::Precondition(format!(
                "wing extent {extent} must exceed twice the grid spacing {h}"
            )));
        }
        let offsets: Vec<f64> = (0..n)
            .map(|k| {
                if n == 1 {
                    extent
                } else {
                    first * (extent / first).powf(k as f64 / (n - 1) as f64)
                }
            })
            .collect();
        let mut nodes: Vec<f64> = offsets.iter().rev().map(|o| self.core_lo - o).collect();
        nodes.extend(self.nodes.iter().filter(|x| self.is_core(**x)));
        nodes.extend(offsets.iter().map(|o| self.core_hi + o));
        self.nodes = nodes;
        Ok(self)
    }

    pub fn is_core(&self, x: f64) -> bool {
        x >= self.core_lo && x <= self.core_hi
    }

    fn core_len(&self) -> usize {
        self.nodes.iter().filter(|x| self.is_core(**x)).count()
    }

    /// Core nodes at least `margin` away from both core edges.
    pub fn interior(&self, margin: f64) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| {
                let x = self.nodes[i];
                x >= self.core_lo + margin && x <= self.core_hi - margin
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.nodes.len() < 2 {
            return Err(Error::Precondition("grid needs at least two nodes".into()));
        }
        if self.nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("grid must be strictly increasing".into()));
        }
        if self.nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("grid nodes must be finite".into()));
        }
        Ok(())
    }
}

/// How the time integral is cut off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Truncation {
    /// Per grid point: stop at the first checkpoint where
    /// `|integrand| <= max(2 se, floor)` has held for `consecutive`
    /// checkpoints in a row; never beyond `max_horizon`.
    Adaptive {
        consecutive: usize,
        max_horizon: f64,
        floor: f64,
    },
    Fixed { horizon: f64 },
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Adaptive {
            consecutive: 5,
            max_horizon: 50.0,
            floor: 1e-6,
        }
    }
}

/// Settings of [`poisson_solve_mc`]. `mu_h` and `mu_h_stderr` come from an
/// invariant-measure estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonConfig {
    pub dt: f64,
    /// Rounded up so every batch holds the same number of sampling units.
    pub n_paths: usize,
    pub n_batches: usize,
    pub scheme: Scheme,
    pub antithetic: bool,
    /// Spacing of the truncation checkpoints in time.
    pub checkpoint: f64,
    pub truncation: Truncation,
    pub mu_h: f64,
    pub mu_h_stderr: f64,
}

impl PoissonConfig {
    pub fn new(n_paths: usize, mu_h: f64, mu_h_stderr: f64) -> Self {
        Self {
            dt: crate::sde::DEFAULT_DT,
            n_paths,
            n_batches: 16,
            scheme: Scheme::TamedEuler,
            antithetic: true,
            checkpoint: 0.5,
            truncation: Truncation::default(),
            mu_h,
            mu_h_stderr,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.checkpoint >= self.dt) {
            return Err(Error::Domain(format!(
                "need dt > 0 and checkpoint >= dt, got dt={}, checkpoint={}",
                self.dt, self.checkpoint
            )));
        }
        if self.n_batches < 2 || self.n_paths == 0 {
            return Err(Error::Precondition(
                "need n_batches >= 2 and n_paths >= 1".into(),
            ));
        }
        if !self.mu_h.is_finite() || !(self.mu_h_stderr >= 0.0) {
            return Err(Error::Domain("mu_h must be finite with stderr >= 0".into()));
        }
        match self.truncation {
            Truncation::Adaptive {
                consecutive,
                max_horizon,
                floor,
            } => {
                if consecutive == 0 || !(max_horizon >= self.checkpoint) || !(floor >= 0.0) {
                    return Err(Error::Domain(
                        "adaptive truncation needs consecutive >= 1, max_horizon >= checkpoint, floor >= 0"
                            .into(),
                    ));
                }
            }
            Truncation::Fixed { horizon } => {
                if !(horizon >= self.dt) {
                    return Err(Error::Domain(format!(
                        "truncation horizon must be >= dt, got {horizon}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Tabulated solution of the Poisson equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSolution {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub core_lo: f64,
    pub core_hi: f64,
    /// Largest per-node truncation time.
    pub truncation_horizon: f64,
    pub horizons: Vec<f64>,
    pub n_paths: usize,
    pub mu_h: f64,
    pub mu_h_stderr: f64,
    /// Solution estimated from each batch of paths separately.
    pub batch_values: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
    pub steps: u64,
}

impl PoissonSolution {
    /// Tabulates a known function; no sampling error.
    pub fn from_function<F: Fn(f64) -> f64>(grid: &PoissonGrid, f: F, mu_h: f64) -> Result<Self> {
        grid.validate()?;
        let values: Vec<f64> = grid.nodes.iter().map(|&x| f(x)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("tabulated values must be finite".into()));
        }
        Ok(Self {
            grid: grid.nodes.clone(),
            stderr: vec![0.0; values.len()],
            values,
            core_lo: grid.core_lo,
            core_hi: grid.core_hi,
            truncation_horizon: 0.0,
            horizons: vec![0.0; grid.nodes.len()],
            n_paths: 0,
            mu_h,
            mu_h_stderr: 0.0,
            batch_values: Vec::new(),
            warnings: Vec::new(),
            steps: 0,
        })
    }

    pub fn spline(&self) -> Result<CubicSpline> {
        CubicSpline::new(&self.grid, &self.values)
    }

    pub fn batch_splines(&self) -> Result<Vec<CubicSpline>> {
        self.batch_values
            .iter()
            .map(|v| CubicSpline::new(&self.grid, v))
            .collect()
    }

    pub fn poisson_grid(&self) -> PoissonGrid {
        PoissonGrid {
            nodes: self.grid.clone(),
            core_lo: self.core_lo,
            core_hi: self.core_hi,
        }
    }

    /// Smallest `C` with `|f(x)| <= C (1 + x^2)^(beta/2)` on the grid.
    pub fn growth_envelope(&self, beta: f64) -> f64 {
        self.grid
            .iter()
            .zip(&self.values)
            .map(|(x, v)| v.abs() / (1.0 + x * x).powf(beta / 2.0))
            .fold(0.0, f64::max)
    }

    /// Least-squares slope of `log |f(x) - f(x_c)|` against `log |x - x_c|`
    /// over nodes with `|x - x_c| >= 1`, where `x_c` is the node nearest the
    /// core centre. Below 1 means sublinear growth.
    pub fn growth_exponent(&self) -> Option<f64> {
        let centre = 0.5 * (self.core_lo + self.core_hi);
        let c = (0..self.grid.len()).min_by(|&a, &b| {
            (self.grid[a] - centre)
                .abs()
                .total_cmp(&(self.grid[b] - centre).abs())
        })?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .grid
            .iter()
            .zip(&self.values)
            .filter(|(x, v)| (*x - self.grid[c]).abs() >= 1.0 && (*v - self.values[c]).abs() > 0.0)
            .map(|(x, v)| {
                (
                    (x - self.grid[c]).abs().ln(),
                    (v - self.values[c]).abs().ln(),
                )
            })
            .unzip();
        if xs.len() < 3 {
            return None;
        }
        Some(stats::linear_fit(&xs, &ys).1)
    }

    /// CSV with columns `x,f_h,stderr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,f_h,stderr")?;
        for ((x, v), s) in self.grid.iter().zip(&self.values).zip(&self.stderr) {
            writeln!(w, "{x:e},{v:e},{s:e}")?;
        }
        Ok(())
    }
}

/// Paths sharing one noise stream: one per grid node, or two with the
/// mirrored partner.
struct Unit {
    rng: RngStream,
    states: Vec<f64>,
    integral: Vec<f64>,
    prev: Vec<f64>,
}

struct Batch {
    units: Vec<Unit>,
    stepper: Stepper,
    increment: Vec<f64>,
}

/// Per-batch sums over units at one checkpoint.
struct BatchSums {
    integrand: Vec<f64>,
    integrand_sq: Vec<f64>,
    integral: Vec<f64>,
}

impl Batch {
    fn advance(
        &mut self,
        steps: u64,
        dt: f64,
        t0: f64,
        h: &TestFunction,
        mu_h: f64,
        members: usize,
    ) -> Result<BatchSums> {
        let g = self.units.first().map_or(0, |u| u.prev.len());
        let inv = 1.0 / members as f64;
        for unit in &mut self.units {
            for k in 1..=steps {
                self.increment.copy_from_slice(self.stepper.draw(&mut unit.rng));
                let z = self.increment[0];
                for i in 0..g {
                    let mut v = 0.0;
                    for m in 0..members {
                        let s = &mut unit.states[m * g + i..m * g + i + 1];
                        let zi = if m == 0 { z } else { -z };
                        self.stepper.apply(s, &[zi])?;
                        if !s[0].is_finite() {
                            return Err(Error::BlowUp {
                                time: t0 + k as f64 * dt,
                                step: ((t0 / dt).round() as u64) + k,
                            });
                        }
                        v += h.eval(s);
                    }
                    let v = v * inv - mu_h;
                    unit.integral[i] += 0.5 * dt * (unit.prev[i] + v);
                    unit.prev[i] = v;
                }
            }
        }
        let mut out = BatchSums {
            integrand: vec![0.0; g],
            integrand_sq: vec![0.0; g],
            integral: vec![0.0; g],
        };
        for unit in &self.units {
            for i in 0..g {
                out.integrand[i] += unit.prev[i];
                out.integrand_sq[i] += unit.prev[i] * unit.prev[i];
                out.integral[i] += unit.integral[i];
            }
        }
        Ok(out)
    }
}

/// `f_h(x) = -int_0^T (E h(X_t^x) - mu_h) dt` on every grid node, by
/// trapezoidal accumulation along simulated paths.
pub fn poisson_solve_mc(
    model: &DriftModel,
    noise: &StableNoise,
    h: &TestFunction,
    grid: &PoissonGrid,
    cfg: &PoissonConfig,
    rng: &RngStream,
) -> Result<PoissonSolution> {
    if noise.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: noise.dim(),
        });
    }
    grid.validate()?;
    cfg.validate()?;
    let g = grid.nodes.len();
    let members = if cfg.antithetic { 2 } else { 1 };
    let k = cfg.n_batches;
    let per_batch = cfg.n_paths.div_ceil(members).div_ceil(k);
    let n_units = per_batch * k;

    let stepper = Stepper::new(model, noise, cfg.dt, cfg.scheme)?;
    let mut batches: Vec<Batch> = (0..k)
        .map(|b| Batch {
            units: (0..per_batch)
                .map(|j| {
                    let start: Vec<f64> = (0..members).flat_map(|_| grid.nodes.clone()).collect();
                    let init: Vec<f64> = grid.nodes.iter().map(|&x| h.eval(&[x]) - cfg.mu_h).collect();
                    Unit {
                        rng: rng.fork(POISSON_TAG, (b * per_batch + j) as u64),
                        states: start,
                        integral: vec![0.0; g],
                        prev: init,
                    }
                })
                .collect(),
            stepper: stepper.clone(),
            increment: vec![0.0; 1],
        })
        .collect();

    let steps_per = steps_for(cfg.checkpoint, cfg.dt);
    let span = steps_per as f64 * cfg.dt;
    let (max_ckpt, consecutive, floor) = match cfg.truncation {
        Truncation::Adaptive {
            consecutive,
            max_horizon,
            floor,
        } => (
            ((max_horizon / span).round() as usize).max(1),
            consecutive,
            floor,
        ),
        Truncation::Fixed { horizon } => (((horizon / span).round() as usize).max(1), 0, 0.0),
    };

    let mut run = vec![0usize; g];
    let mut decided: Vec<Option<usize>> = vec![None; g];
    // batch_integrals[c][b][i]: mean integral of batch b at checkpoint c.
    let mut batch_integrals: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut last_mean = vec![0.0; g];
    let mut last_se = vec![0.0; g];
    let mut steps_done = 0u64;
    for c in 0..max_ckpt {
        let t0 = c as f64 * span;
        let sums: Vec<BatchSums> = batches
            .par_iter_mut()
            .map(|b| b.advance(steps_per, cfg.dt, t0, h, cfg.mu_h, members))
            .collect::<Result<_>>()?;
        steps_done += steps_per;
        let n = n_units as f64;
        for i in 0..g {
            let s1: f64 = sums.iter().map(|s| s.integrand[i]).sum();
            let s2: f64 = sums.iter().map(|s| s.integrand_sq[i]).sum();
            let mean = s1 / n;
            let var = ((s2 - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
            last_mean[i] = mean;
            last_se[i] = (var / n).sqrt();
            if consecutive > 0 && decided[i].is_none() {
                if mean.abs() <= (2.0 * last_se[i]).max(floor) {
                    run[i] += 1;
                } else {
                    run[i] = 0;
                }
                if run[i] >= consecutive {
                    decided[i] = Some(c);
                }
            }
        }
        batch_integrals.push(
            sums.iter()
                .map(|s| s.integral.iter().map(|v| v / per_batch as f64).collect())
                .collect(),
        );
        if consecutive > 0 && decided.iter().all(Option::is_some) {
            break;
        }
    }
    let last = batch_integrals.len() - 1;

    let mut warnings = Vec::new();
    match cfg.truncation {
        Truncation::Adaptive { .. } => {
            let open = decided.iter().filter(|d| d.is_none()).count();
            if open > 0 {
                warnings.push(format!(
                    "{open} grid nodes reached the maximum horizon {:.3} before the integrand became negligible",
                    (last + 1) as f64 * span
                ));
            }
        }
        Truncation::Fixed { horizon } => {
            let bad = (0..g)
                .filter(|&i| last_mean[i].abs() > (10.0 * last_se[i]).max(1e-12))
                .count();
            if bad > 0 {
                warnings.push(format!(
                    "integrand at T = {horizon} exceeds 10 standard errors at {bad} grid nodes; truncation too early"
                ));
            }
        }
    }
    for w in &warnings {
        warn!("{w}");
    }

    let mut values = vec![0.0; g];
    let mut stderr = vec![0.0; g];
    let mut horizons = vec![0.0; g];
    let mut batch_values = vec![vec![0.0; g]; k];
    for i in 0..g {
        let c = decided[i].unwrap_or(last);
        let t = (c + 1) as f64 * span;
        let per: Vec<f64> = batch_integrals[c].iter().map(|b| -b[i]).collect();
        for (bv, p) in batch_values.iter_mut().zip(&per) {
            bv[i] = *p;
        }
        let (m, se) = stats::mean_se(&per);
        values[i] = m;
        stderr[i] = se.hypot(t * cfg.mu_h_stderr);
        horizons[i] = t;
    }
    Ok(PoissonSolution {
        grid: grid.nodes.clone(),
        values,
        stderr,
        core_lo: grid.core_lo,
        core_hi: grid.core_hi,
        truncation_horizon: horizons.iter().copied().fold(0.0, f64::max),
        horizons,
        n_paths: n_units * members,
        mu_h: cfg.mu_h,
        mu_h_stderr: cfg.mu_h_stderr,
        batch_values,
        warnings,
        steps: steps_done * (n_units * members * g) as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub x: f64,
    pub generator: f64,
    pub target: f64,
    pub residual: f64,
    pub combined_stderr: f64,
    pub within: bool,
}

/// Check of `A f_h = h - mu(h)` on interior grid nodes. A node passes when
/// its residual is within `multiple` combined standard errors (batch spread
/// of the generator, error of `mu_h`, jump sampling and cutoff refinement).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub points: Vec<ResidualPoint>,
    pub multiple: f64,
    pub fraction_within: f64,
    pub required_fraction: f64,
    pub pass: bool,
}

pub const RESIDUAL_MULTIPLE: f64 = 5.0;
pub const RESIDUAL_REQUIRED_FRACTION: f64 = 0.9;

/// Evaluates the Poisson residual at core nodes at least `margin` away
/// from the core edges.
pub fn poisson_residual(
    fh: &PoissonSolution,
    model: &DriftModel,
    noise: &StableNoise,
    h: &TestFunction,
    quad: &QuadratureConfig,
    margin: f64,
) -> Result<ResidualReport> {
    if fh.batch_values.len() < 2 {
        return Err(Error::Precondition(
            "the residual check needs a Monte Carlo solution with batches".into(),
        ));
    }
    let gen = Generator::new(model, noise, quad)?;
    let spline = fh.spline()?;
    let batches = fh.batch_splines()?;
    let idx = fh.poisson_grid().interior(margin);
    if idx.is_empty() {
        return Err(Error::Empty("interior grid nodes"));
    }
    let f = |y: &[f64]| spline.eval(y[0]);
    let points = run_replicas(idx.len(), |j| {
        let x = fh.grid[idx[j]];
        let main = gen.apply(&f, &[x])?;
        let per: Vec<f64> = batches
            .iter()
            .map(|s| gen.apply_unchecked(&|y: &[f64]| s.eval(y[0]), &[x]).value)
            .collect();
        let batch_se = stats::std_error(&per);
        let combined = (batch_se.powi(2)
            + fh.mu_h_stderr.powi(2)
            + main.stderr.powi(2)
            + main.refinement_change.powi(2))
        .sqrt();
        let target = h.eval(&[x]) - fh.mu_h;
        let residual = main.value - target;
        Ok(ResidualPoint {
            x,
            generator: main.value,
            target,
            residual,
            combined_stderr: combined,
            within: residual.abs() <= RESIDUAL_MULTIPLE * combined,
        })
    })?;
    let fraction = points.iter().filter(|p| p.within).count() as f64 / points.len() as f64;
    Ok(ResidualReport {
        points,
        multiple: RESIDUAL_MULTIPLE,
        fraction_within: fraction,
        required_fraction: RESIDUAL_REQUIRED_FRACTION,
        pass: fraction >= RESIDUAL_REQUIRED_FRACTION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise1() -> StableNoise {
        StableNoise::new(1.5, 1).unwrap()
    }

    #[test]
    fn grid_construction() {
        let g = PoissonGrid::uniform(-2.0, 2.0, 5).unwrap();
        assert_eq!(g.nodes, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        let w = g.clone().with_wings(3, 10.0).unwrap();
        assert_eq!(w.nodes.len(), 11);
        assert_eq!(w.nodes[0], -12.0);
        assert_eq!(w.nodes[10], 12.0);
        assert!(w.nodes.windows(2).all(|p| p[1] > p[0]));
        assert_eq!(w.interior(1.0).len(), 3);
        assert!(PoissonGrid::uniform(1.0, 1.0, 5).is_err());
        assert!(g.with_wings(2, 1.0).is_err());
    }

    #[test]
    fn constant_observable_gives_zero_solution() {
        let model = DriftModel::power(0.6).unwrap();
        let h = TestFunction::constant(2.0);
        let grid = PoissonGrid::uniform(-2.0, 2.0, 9).unwrap();
        let mut cfg = PoissonConfig::new(32, 2.0, 0.0);
        cfg.n_batches = 4;
        let sol = poisson_solve_mc(&model, &noise1(), &h, &grid, &cfg, &RngStream::new(3, 0)).unwrap();
        assert!(sol.values.iter().all(|v| v.abs() < 1e-12));
        assert!(sol.warnings.is_empty());
        assert!((sol.truncation_horizon - 2.5).abs() < 1e-9);
    }

    #[test]
    fn linear_observable_with_linear_drift() {
        // f(x) = -x solves the equation exactly for b(x) = -x and h(x) = x.
        let model = DriftModel::power(0.0).unwrap();
        let h = TestFunction::identity();
        let grid = PoissonGrid::uniform(-3.0, 3.0, 13).unwrap();
        let mut cfg = PoissonConfig::new(16, 0.0, 0.0);
        cfg.n_batches = 4;
        cfg.scheme = Scheme::SemiImplicit;
        let sol = poisson_solve_mc(&model, &noise1(), &h, &grid, &cfg, &RngStream::new(5, 0)).unwrap();
        for (x, v) in sol.grid.iter().zip(&sol.values) {
            assert!((v + x).abs() <= 0.01 * x.abs() + 1e-6, "{x}: {v}");
        }
    }

    #[test]
    fn fixed_horizon_warns_when_too_short() {
        let model = DriftModel::power(0.0).unwrap();
        let h = TestFunction::identity();
        let grid = PoissonGrid::uniform(1.0, 3.0, 3).unwrap();
        let mut cfg = PoissonConfig::new(8, 0.0, 0.0);
        cfg.n_batches = 2;
        cfg.truncation = Truncation::Fixed { horizon: 0.5 };
        let sol = poisson_solve_mc(&model, &noise1(), &h, &grid, &cfg, &RngStream::new(5, 0)).unwrap();
        assert_eq!(sol.warnings.len(), 1);
    }

    #[test]
    fn solution_is_reproducible() {
        let model = DriftModel::power(0.6).unwrap();
        let h = TestFunction::sin();
        let grid = PoissonGrid::uniform(-2.0, 2.0, 5).unwrap();
        let mut cfg = PoissonConfig::new(16, 0.0, 0.0);
        cfg.n_batches = 4;
        let a = poisson_solve_mc(&model, &noise1(), &h, &grid, &cfg, &RngStream::new(8, 0)).unwrap();
        let b = poisson_solve_mc(&model, &noise1(), &h, &grid, &cfg, &RngStream::new(8, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_layout() {
        let grid = PoissonGrid::uniform(0.0, 1.0, 3).unwrap();
        let sol = PoissonSolution::from_function(&grid, |x| -x, 0.0).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("x,f_h,stderr"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn growth_exponent_of_powers() {
        let grid = PoissonGrid::uniform(-50.0, 50.0, 201).unwrap();
        let sol = PoissonSolution::from_function(&grid, |x: f64| x.abs().powf(0.4), 0.0).unwrap();
        assert!((sol.growth_exponent().unwrap() - 0.4).abs() < 1e-9);
        assert!(sol.growth_envelope(0.8) <= 1.0);
    }
}
