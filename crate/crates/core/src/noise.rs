//! Rotationally symmetric alpha-stable driving noise.
//!
//! Increments are drawn exactly through subordination: a Brownian motion run
//! on an independent (alpha/2)-stable clock. With clock Laplace exponent
//! `(2 lambda)^(alpha/2)` the resulting increment over `dt` has
//! characteristic function `exp(-dt |xi|^alpha)` in every dimension, and no
//! small-jump truncation is involved.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_adaptive, QuadratureConfig};
use crate::rng::RngStream;

/// Uniform variates are kept this far from {0, 1} before entering the
/// Chambers-Mallows-Stuck transform.
pub const UNIFORM_GUARD: f64 = 1e-12;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 1.0 && alpha < 2.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must lie in (1, 2), got {alpha}")))
    }
}

/// Density constant of the Levy measure `nu(dz) = C |z|^{-alpha-d} dz`.
pub fn levy_constant(alpha: f64, dim: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if dim < 1 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let d = dim as f64;
    Ok(alpha * 2f64.powf(alpha - 1.0) * PI.powf(-d / 2.0) * libm::tgamma((d + alpha) / 2.0)
        / libm::tgamma(1.0 - alpha / 2.0))
}

/// Surface area of the unit sphere in `R^dim` (2 for `dim = 1`).
pub fn unit_sphere_area(dim: usize) -> f64 {
    let d = dim as f64;
    2.0 * PI.powf(d / 2.0) / libm::tgamma(d / 2.0)
}

/// Law of the driving process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableNoise {
    alpha: f64,
    dim: usize,
    levy_constant: f64,
    #[serde(default)]
    muted: bool,
}

impl StableNoise {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        let levy_constant = levy_constant(alpha, dim)?;
        Ok(Self {
            alpha,
            dim,
            levy_constant,
            muted: false,
        })
    }

    /// Test hook: the same law, but every sampled increment is zero. The
    /// random stream is still consumed so paths stay aligned with unmuted
    /// runs.
    pub fn muted(mut self) -> Self {
        self.muted = true;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levy_constant(&self) -> f64 {
        self.levy_constant
    }

    pub fn is_muted(&self) -> bool {
        self.muted
    }

    pub fn increment_sampler(&self, dt: f64) -> Result<IncrementSampler> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        let a = self.alpha / 2.0;
        Ok(IncrementSampler {
            clock_index: a,
            inv_clock_index: 1.0 / a,
            tail_power: (1.0 - a) / a,
            log_clock_scale: (2.0 * dt.powf(2.0 / self.alpha)).ln(),
            dim: self.dim,
            muted: self.muted,
        })
    }

    /// One draw of `Z_dt`.
    pub fn sample_increment(&self, dt: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
        let sampler = self.increment_sampler(dt)?;
        let mut out = vec![0.0; self.dim];
        sampler.fill(rng, &mut out);
        Ok(out)
    }
}

/// Increment generator with every `dt`-dependent constant precomputed.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    clock_index: f64,
    inv_clock_index: f64,
    tail_power: f64,
    log_clock_scale: f64,
    dim: usize,
    muted: bool,
}

impl IncrementSampler {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Random clock advance over one step: `2 dt^{2/alpha} S` with `S`
    /// positive (alpha/2)-stable, `E exp(-lambda S) = exp(-lambda^{alpha/2})`.
    #[inline]
    pub fn clock_advance<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        (self.log_clock_scale + self.log_positive_stable(rng)).exp()
    }

    /// Logarithm of a positive stable variate, from Kanter's form of the
    /// Chambers-Mallows-Stuck transform:
    /// `S = sin(aV) / sin(V)^{1/a} * (sin((1-a)V) / W)^{(1-a)/a}`.
    #[inline]
    fn log_positive_stable<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>().clamp(UNIFORM_GUARD, 1.0 - UNIFORM_GUARD);
        let v: f64 = rng.random::<f64>().clamp(UNIFORM_GUARD, 1.0 - UNIFORM_GUARD);
        let angle = PI * u;
        let a = self.clock_index;
        let log_w = (-v.ln()).ln();
        (a * angle).sin().ln() - self.inv_clock_index * angle.sin().ln()
            + self.tail_power * (((1.0 - a) * angle).sin().ln() - log_w)
    }

    #[inline]
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let scale = (0.5 * (self.log_clock_scale + self.log_positive_stable(rng))).exp();
        for o in out.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *o = if self.muted { 0.0 } else { scale * g };
        }
    }
}

/// `exp(-(scale |xi|)^alpha)`, the characteristic function of `scale * Z_1`
/// in one coordinate direction.
pub fn stable_cf(alpha: f64, scale: f64, xi: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(scale >= 0.0) {
        return Err(Error::Domain(format!("scale must be nonnegative, got {scale}")));
    }
    Ok((-(scale * xi.abs()).powf(alpha)).exp())
}

/// CDF of the one-dimensional symmetric stable law with characteristic
/// function `exp(-|xi|^alpha)`, by Gil-Pelaez inversion:
/// `F(x) = 1/2 + (1/pi) int_0^inf sin(x u) exp(-u^alpha) / u du`.
pub fn stable_cdf_1d(alpha: f64, x: f64, quad: &QuadratureConfig) -> Result<f64> {
    check_alpha(alpha)?;
    let tol = quad.cdf_tolerance;
    if !(tol > 0.0) {
        return Err(Error::Domain("cdf_tolerance must be positive".into()));
    }
    if x.is_nan() {
        return Err(Error::Domain("x is NaN".into()));
    }
    if x == 0.0 {
        return Ok(0.5);
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    // Tail of the inversion integral beyond U is bounded by
    // E1(U^alpha) / (pi alpha) <= exp(-L) / (pi alpha L) with L = U^alpha.
    let budget = tol / 4.0;
    let mut level = (1.0 / (PI * alpha * budget)).ln().max(1.0);
    for _ in 0..8 {
        level = (1.0 / (PI * alpha * budget * level)).ln().max(1.0);
    }
    let cutoff = level.powf(1.0 / alpha);
    let ax = x.abs();
    let half_periods = (cutoff * ax / PI).ceil() as usize;
    let initial = half_periods + 8;
    let (integral, _) = integrate_adaptive(
        |u| (ax * u).sin() * (-u.powf(alpha)).exp() / u,
        0.0,
        cutoff,
        3.0 * tol / 4.0,
        initial,
        initial * 16 + 4096,
    )
    .map_err(|e| e.context(format!("stable CDF inversion at x = {x}")))?;
    let upper = (0.5 + integral / PI).clamp(0.0, 1.0);
    Ok(if x > 0.0 { upper } else { 1.0 - upper })
}
