//! Drift models, test functions and time stepping for
//! `dX = b(X) dt + dZ`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{IncrementSampler, StableNoise};
use crate::rng::RngStream;

pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    PowerDrift,
    Custom,
}

/// Drift `b` together with its one-sided Lipschitz / dissipativity
/// constants: `<b(x)-b(y), x-y>` is at most `k1 |x-y|^2` for
/// `|x-y| <= ell` and at most `-k2 |x-y|^(2+theta)` beyond.
#[derive(Clone)]
pub struct DriftModel {
    theta: f64,
    k1: f64,
    k2: f64,
    ell: f64,
    kind: DriftKind,
    custom: Option<VectorField>,
    odd: bool,
}

impl fmt::Debug for DriftModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftModel")
            .field("kind", &self.kind)
            .field("theta", &self.theta)
            .field("k1", &self.k1)
            .field("k2", &self.k2)
            .field("ell", &self.ell)
            .finish()
    }
}

fn check_constants(theta: f64, k1: f64, k2: f64, ell: f64) -> Result<()> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta must be >= 0, got {theta}")));
    }
    for (name, v) in [("k1", k1), ("k2", k2), ("ell", ell)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

impl DriftModel {
    /// `b(x) = -x |x|^theta` with constants that satisfy the dissipativity
    /// condition for every `theta >= 0`: the map is monotone, so any
    /// `k1 > 0` works, and `<b(x)-b(y), x-y> <= -2^{-theta} |x-y|^{2+theta}`.
    pub fn power(theta: f64) -> Result<Self> {
        Self::power_with_constants(theta, 1.0, 2f64.powf(-theta), 1.0)
    }

    pub fn power_with_constants(theta: f64, k1: f64, k2: f64, ell: f64) -> Result<Self> {
        check_constants(theta, k1, k2, ell)?;
        Ok(Self {
            theta,
            k1,
            k2,
            ell,
            kind: DriftKind::PowerDrift,
            custom: None,
            odd: true,
        })
    }

    pub fn custom<F>(theta: f64, k1: f64, k2: f64, ell: f64, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        check_constants(theta, k1, k2, ell)?;
        Ok(Self {
            theta,
            k1,
            k2,
            ell,
            kind: DriftKind::Custom,
            custom: Some(Arc::new(f)),
            odd: false,
        })
    }

    /// Declares `b(-x) = -b(x)` for a custom drift. Together with symmetric
    /// noise this makes the invariant law symmetric.
    pub fn with_odd_symmetry(mut self, odd: bool) -> Self {
        self.odd = odd;
        self
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn k1(&self) -> f64 {
        self.k1
    }
    pub fn k2(&self) -> f64 {
        self.k2
    }
    pub fn ell(&self) -> f64 {
        self.ell
    }
    pub fn kind(&self) -> DriftKind {
        self.kind
    }
    pub fn is_odd(&self) -> bool {
        self.odd
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            DriftKind::PowerDrift => {
                let factor = if self.theta == 0.0 {
                    1.0
                } else {
                    norm(x).powf(self.theta)
                };
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -xi * factor;
                }
            }
            DriftKind::Custom => (self.custom.as_ref().expect("custom drift has evaluator"))(x, out),
        }
    }

    /// `b(x)`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.eval_into(x, &mut out);
        out
    }
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    if x.len() == 1 {
        x[0].abs()
    } else {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random probe of the dissipativity condition.
#[derive(Debug, Clone)]
pub struct DissipativityProbe {
    pub n_pairs: usize,
    pub radius: f64,
    pub dim: usize,
    pub rng: RngStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityViolation {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub inner_product: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityReport {
    pub violations: Vec<DissipativityViolation>,
    pub pass: bool,
}

pub fn verify_dissipativity(
    model: &DriftModel,
    probe: DissipativityProbe,
) -> Result<DissipativityReport> {
    if probe.n_pairs == 0 {
        return Err(Error::Precondition("n_pairs must be at least 1".into()));
    }
    if !(probe.radius > 0.0) || probe.dim == 0 {
        return Err(Error::Precondition("radius and dim must be positive".into()));
    }
    let mut rng = probe.rng;
    let d = probe.dim;
    let mut violations = Vec::new();
    let mut dir = vec![0.0; d];
    for _ in 0..probe.n_pairs {
        let x: Vec<f64> = {
            random_direction(&mut rng, &mut dir);
            let r = probe.radius * rng.random::<f64>();
            dir.iter().map(|u| r * u).collect()
        };
        random_direction(&mut rng, &mut dir);
        // separation spread over (0, radius]
        let sep = probe.radius * (1.0 - rng.random::<f64>());
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, u)| a + sep * u).collect();
        let bx = model.eval(&x);
        let by = model.eval(&y);
        let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let db: Vec<f64> = bx.iter().zip(&by).map(|(a, b)| a - b).collect();
        let inner = dot(&db, &diff);
        let dist = norm(&diff);
        let bound = if dist <= model.ell {
            model.k1 * dist * dist
        } else {
            -model.k2 * dist.powf(2.0 + model.theta)
        };
        let slack = 1e-10 * (inner.abs() + bound.abs()).max(1e-300);
        if inner > bound + slack {
            violations.push(DissipativityViolation {
                x,
                y,
                inner_product: inner,
                bound,
            });
        }
    }
    Ok(DissipativityReport {
        pass: violations.is_empty(),
        violations,
    })
}

pub(crate) fn random_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        for o in out.iter_mut() {
            *o = StandardNormal.sample(rng);
        }
        let n = norm(out);
        if n > 1e-12 {
            out.iter_mut().for_each(|o| *o /= n);
            return;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Bounded,
    Lipschitz,
}

/// Observable `h` with its class: a sup-norm bound for bounded functions or
/// a Lipschitz constant for Lipschitz ones.
#[derive(Clone)]
pub struct TestFunction {
    kind: TestKind,
    bound_or_lip: f64,
    name: String,
    eval: ScalarField,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("bound_or_lip", &self.bound_or_lip)
            .finish()
    }
}

impl TestFunction {
    pub fn new<F>(kind: TestKind, bound_or_lip: f64, name: impl Into<String>, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if !(bound_or_lip >= 0.0 && bound_or_lip.is_finite()) {
            return Err(Error::Domain(format!(
                "bound/Lipschitz constant must be finite and >= 0, got {bound_or_lip}"
            )));
        }
        Ok(Self {
            kind,
            bound_or_lip,
            name: name.into(),
            eval: Arc::new(f),
        })
    }

    /// `sin` of the first coordinate; bounded by 1.
    pub fn sin() -> Self {
        Self::new(TestKind::Bounded, 1.0, "sin", |x| x[0].sin()).expect("valid")
    }

    /// First coordinate; Lipschitz with constant 1.
    pub fn identity() -> Self {
        Self::new(TestKind::Lipschitz, 1.0, "identity", |x| x[0]).expect("valid")
    }

    pub fn constant(c: f64) -> Self {
        Self::new(TestKind::Bounded, c.abs(), format!("const({c})"), move |_| c).expect("valid")
    }

    /// `h + c`, same class.
    pub fn shifted(&self, c: f64) -> Self {
        let inner = self.eval.clone();
        let bound = match self.kind {
            TestKind::Bounded => self.bound_or_lip + c.abs(),
            TestKind::Lipschitz => self.bound_or_lip,
        };
        Self {
            kind: self.kind,
            bound_or_lip: bound,
            name: format!("{}+{c}", self.name),
            eval: Arc::new(move |x| inner(x) + c),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn kind(&self) -> TestKind {
        self.kind
    }

    pub fn bound_or_lip(&self) -> f64 {
        self.bound_or_lip
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Checks the class invariant on the given points (and all pairs of
    /// consecutive points for the Lipschitz kind).
    pub fn check_on(&self, points: &[Vec<f64>]) -> bool {
        let tol = 1e-12;
        match self.kind {
            TestKind::Bounded => points
                .iter()
                .all(|p| self.eval(p).abs() <= self.bound_or_lip * (1.0 + tol) + tol),
            TestKind::Lipschitz => points.windows(2).all(|w| {
                let d: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| a - b).collect();
                (self.eval(&w[0]) - self.eval(&w[1])).abs()
                    <= self.bound_or_lip * norm(&d) * (1.0 + tol) + tol
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    TamedEuler,
    SemiImplicit,
}

/// Path settings. `burn_in` is discarded by the averaging routines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub x0: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub scheme: Scheme,
}

pub const DEFAULT_DT: f64 = 1e-2;
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.2;

impl SimConfig {
    /// Default step size and a burn-in of 20% of the horizon.
    pub fn new(x0: Vec<f64>, horizon: f64) -> Self {
        Self {
            x0,
            dt: DEFAULT_DT,
            horizon,
            burn_in: DEFAULT_BURN_IN_FRACTION * horizon,
            scheme: Scheme::TamedEuler,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Domain(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.dt > self.horizon {
            return Err(Error::Domain("dt must not exceed the horizon".into()));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            return Err(Error::Domain(format!(
                "burn_in must lie in [0, horizon), got {}",
                self.burn_in
            )));
        }
        if self.x0.is_empty() || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("x0 must be a finite, non-empty point".into()));
        }
        Ok(())
    }

    /// `ceil(horizon / dt)`, ignoring round-off just above an integer.
    pub fn n_steps(&self) -> u64 {
        steps_for(self.horizon, self.dt)
    }

    pub fn burn_in_steps(&self) -> u64 {
        steps_for(self.burn_in, self.dt)
    }
}

pub(crate) fn steps_for(span: f64, dt: f64) -> u64 {
    let r = span / dt;
    let n = r.round();
    if (r - n).abs() < 1e-9 * n.max(1.0) {
        n as u64
    } else {
        r.ceil() as u64
    }
}

/// One-step map of the chosen scheme for a fixed model, noise law and `dt`.
///
/// `mirror` negates every noise increment: the mirrored stepper driven by
/// the same stream produces the antithetic partner of a path.
#[derive(Debug, Clone)]
pub struct Stepper {
    model: DriftModel,
    sampler: IncrementSampler,
    scheme: Scheme,
    dt: f64,
    mirror: bool,
    drift: Vec<f64>,
    increment: Vec<f64>,
}

pub const NEWTON_MAX_ITER: usize = 100;
pub const NEWTON_TOL: f64 = 1e-12;

impl Stepper {
    pub fn new(model: &DriftModel, noise: &StableNoise, dt: f64, scheme: Scheme) -> Result<Self> {
        if scheme == Scheme::SemiImplicit && model.kind() != DriftKind::PowerDrift {
            return Err(Error::Precondition(
                "the semi-implicit scheme is only available for the power drift".into(),
            ));
        }
        let sampler = noise.increment_sampler(dt)?;
        let d = noise.dim();
        Ok(Self {
            model: model.clone(),
            sampler,
            scheme,
            dt,
            mirror: false,
            drift: vec![0.0; d],
            increment: vec![0.0; d],
        })
    }

    pub fn mirrored(mut self, mirror: bool) -> Self {
        self.mirror = mirror;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.sampler.dim()
    }

    /// Advances `state` by one step in place.
    #[inline]
    pub fn step(&mut self, state: &mut [f64], rng: &mut RngStream) -> Result<()> {
        self.draw(rng);
        let increment = std::mem::take(&mut self.increment);
        let out = self.apply(state, &increment);
        self.increment = increment;
        out
    }

    /// Draws the next increment into the internal buffer, honouring the
    /// mirror flag, and returns it.
    #[inline]
    pub fn draw(&mut self, rng: &mut RngStream) -> &[f64] {
        self.sampler.fill(rng, &mut self.increment);
        if self.mirror {
            self.increment.iter_mut().for_each(|v| *v = -*v);
        }
        &self.increment
    }

    /// Deterministic part of a step: applies the drift update to `state`
    /// and adds `increment`.
    #[inline]
    pub fn apply(&mut self, state: &mut [f64], increment: &[f64]) -> Result<()> {
        match self.scheme {
            Scheme::TamedEuler => {
                self.model.eval_into(state, &mut self.drift);
                let tame = self.dt / (1.0 + self.dt * norm(&self.drift));
                for ((s, b), z) in state.iter_mut().zip(&self.drift).zip(increment) {
                    *s += tame * b + z;
                }
            }
            Scheme::SemiImplicit => {
                for (s, z) in state.iter_mut().zip(increment) {
                    *s += z;
                }
                let target = norm(state);
                if target > 0.0 {
                    let r = solve_radius(target, self.dt, self.model.theta())?;
                    let scale = r / target;
                    state.iter_mut().for_each(|s| *s *= scale);
                }
            }
        }
        Ok(())
    }
}

/// Solves `r + dt r^(1+theta) = target` for `r >= 0` by Newton's method.
fn solve_radius(target: f64, dt: f64, theta: f64) -> Result<f64> {
    if theta == 0.0 {
        return Ok(target / (1.0 + dt));
    }
    let p = 1.0 + theta;
    // Below the root; the first Newton step lands above it, after which the
    // iterates decrease monotonically.
    let mut r = target / (1.0 + dt * target.powf(theta));
    let tol = NEWTON_TOL * target.max(1.0);
    let mut residual = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let rp = r.powf(theta);
        residual = r + dt * rp * r - target;
        if residual.abs() <= tol {
            return Ok(r);
        }
        let slope = 1.0 + dt * p * rp;
        r = (r - residual / slope).max(0.0);
    }
    Err(Error::NewtonDivergence {
        residual: residual.abs(),
        iterations: NEWTON_MAX_ITER,
    })
}

/// Integrates one path from `cfg.x0` over `n_steps` steps, invoking
/// `observer(t, state)` after every update. Returns the final state.
pub fn integrate_path<O>(
    model: &DriftModel,
    noise: &StableNoise,
    cfg: &SimConfig,
    rng: &mut RngStream,
    observer: O,
) -> Result<Vec<f64>>
where
    O: FnMut(f64, &[f64]),
{
    integrate_path_mirrored(model, noise, cfg, rng, false, observer)
}

pub fn integrate_path_mirrored<O>(
    model: &DriftModel,
    noise: &StableNoise,
    cfg: &SimConfig,
    rng: &mut RngStream,
    mirror: bool,
    mut observer: O,
) -> Result<Vec<f64>>
where
    O: FnMut(f64, &[f64]),
{
    cfg.validate()?;
    if cfg.x0.len() != noise.dim() {
        return Err(Error::Dimension {
            expected: noise.dim(),
            got: cfg.x0.len(),
        });
    }
    let mut stepper = Stepper::new(model, noise, cfg.dt, cfg.scheme)?.mirrored(mirror);
    let mut state = cfg.x0.clone();
    let n = cfg.n_steps();
    for k in 1..=n {
        stepper.step(&mut state, rng)?;
        let t = k as f64 * cfg.dt;
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { time: t, step: k });
        }
        observer(t, &state);
    }
    Ok(state)
}

/// Riemann-sum estimate of `(1/(T - burn_in)) int_{burn_in}^T h(X_s) ds`.
pub fn time_average(
    model: &DriftModel,
    noise: &StableNoise,
    h: &TestFunction,
    cfg: &SimConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    cfg.validate()?;
    let skip = cfg.burn_in_steps();
    let mut k = 0u64;
    let mut sum = 0.0;
    let mut count = 0u64;
    integrate_path(model, noise, cfg, rng, |_, x| {
        k += 1;
        if k > skip {
            sum += h.eval(x);
            count += 1;
        }
    })?;
    if count == 0 {
        return Err(Error::Precondition("no steps after burn-in".into()));
    }
    Ok(sum / count as f64)
}

/// Runs `n` replicas in parallel; results come back in replica order, so
/// the output does not depend on scheduling.
pub fn run_replicas<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}
