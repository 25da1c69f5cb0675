//! Integrals against the Levy measure `nu(dz) = C |z|^{-d-alpha} dz` and the
//! generator `A f = <b, grad f> + int [f(x+z) - f(x) - <z, grad f> 1{|z|<=1}] nu(dz)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{unit_sphere_area, StableNoise};
use crate::quadrature::{gauss_legendre_composite, QuadratureConfig};
use crate::rng::RngStream;
use crate::sde::{dot, random_direction, DriftModel};

const DIRECTION_TAG: u64 = 0x1a7a_0101;
const RADIUS_TAG: u64 = 0x1a7a_0102;

/// Central-difference step for gradients.
pub const GRAD_STEP: f64 = 1e-4;
/// Central-difference step for second derivatives.
pub const HESS_STEP: f64 = 1e-3;

/// Value of a jump integral with the sampling error of its large-jump part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpValue {
    pub value: f64,
    pub stderr: f64,
}

/// Precomputed nodes for integrals over `|z| <= outer_radius`.
///
/// `|z| <= eps`: second-order Taylor surrogate in closed form.
/// `eps < |z| <= 1`: composite Gauss-Legendre in `s` with `r = eps^(1-s)`.
/// `1 < |z| <= R`: stratified sampling of `r` from the density proportional
/// to `r^(-1-alpha)`, each radius used with an antithetic pair of directions.
///
/// Directions and radii depend only on `quad.seed`, so two quadratures built
/// from the same settings share their random nodes.
#[derive(Debug, Clone)]
pub struct JumpQuadrature {
    dim: usize,
    levy_constant: f64,
    sphere_area: f64,
    inner_cutoff: f64,
    outer_radius: f64,
    small_factor: f64,
    ring: Vec<(f64, f64)>,
    ring_dirs: Vec<f64>,
    large_radii: Vec<f64>,
    large_dirs: Vec<f64>,
    large_weight: f64,
}

impl JumpQuadrature {
    pub fn new(noise: &StableNoise, quad: &QuadratureConfig) -> Result<Self> {
        quad.validate()?;
        Self::build(noise, quad, quad.inner_cutoff, quad.outer_radius)
    }

    /// Same nodes beyond the unit ball, different inner cutoff and radius.
    pub fn with_cutoffs(
        noise: &StableNoise,
        quad: &QuadratureConfig,
        inner_cutoff: f64,
        outer_radius: f64,
    ) -> Result<Self> {
        let mut q = quad.clone();
        q.inner_cutoff = inner_cutoff;
        q.outer_radius = outer_radius;
        q.validate()?;
        Self::build(noise, &q, inner_cutoff, outer_radius)
    }

    fn build(noise: &StableNoise, quad: &QuadratureConfig, eps: f64, radius: f64) -> Result<Self> {
        let alpha = noise.alpha();
        let dim = noise.dim();
        let d = dim as f64;
        let sphere_area = unit_sphere_area(dim);
        let small_factor = sphere_area / d * eps.powf(2.0 - alpha) / (2.0 - alpha);
        let log_eps = -eps.ln();
        let ring = gauss_legendre_composite(0.0, 1.0, quad.ring_panels)
            .into_iter()
            .map(|(s, w)| {
                let r = eps.powf(1.0 - s);
                (r, w * log_eps * r.powf(-alpha))
            })
            .collect();

        let mut dir_rng = RngStream::new(quad.seed, DIRECTION_TAG);
        let n_ring_dirs = if dim == 1 { 1 } else { quad.n_directions };
        let mut ring_dirs = vec![1.0; n_ring_dirs * dim];
        let n = quad.n_jump_samples;
        let mut large_dirs = vec![1.0; n * dim];
        if dim > 1 {
            for u in ring_dirs.chunks_exact_mut(dim) {
                random_direction(&mut dir_rng, u);
            }
            for u in large_dirs.chunks_exact_mut(dim) {
                random_direction(&mut dir_rng, u);
            }
        }

        let mut r_rng = RngStream::new(quad.seed, RADIUS_TAG);
        let tail = radius.powf(-alpha);
        let large_radii = (0..n)
            .map(|i| {
                let u = (i as f64 + r_rng.random::<f64>()) / n as f64;
                (1.0 - u * (1.0 - tail)).powf(-1.0 / alpha)
            })
            .collect();
        let mass = (1.0 - tail) / alpha;

        Ok(Self {
            dim,
            levy_constant: noise.levy_constant(),
            sphere_area,
            inner_cutoff: eps,
            outer_radius: radius,
            small_factor,
            ring,
            ring_dirs,
            large_radii,
            large_dirs,
            large_weight: mass / n as f64,
        })
    }

    pub fn inner_cutoff(&self) -> f64 {
        self.inner_cutoff
    }

    pub fn outer_radius(&self) -> f64 {
        self.outer_radius
    }

    /// `int_{eps < |z| <= 1} g(|z|, z/|z|) |z|^{-d-alpha} dz`.
    fn ring_sum<F: FnMut(f64, &[f64]) -> f64>(&self, mut g: F) -> f64 {
        let n_dirs = self.ring_dirs.len() / self.dim;
        let dir_w = self.sphere_area / n_dirs as f64;
        let mut total = 0.0;
        for &(r, w) in &self.ring {
            let mut acc = 0.0;
            for u in self.ring_dirs.chunks_exact(self.dim) {
                acc += g(r, u);
            }
            total += w * dir_w * acc;
        }
        total
    }

    /// `int_{1 < |z| <= R} g(|z|, z/|z|) |z|^{-d-alpha} dz` with a stratified
    /// standard error.
    fn large_sum<F: FnMut(f64, &[f64]) -> f64>(&self, mut g: F) -> JumpValue {
        let w = self.sphere_area * self.large_weight;
        let ys: Vec<f64> = self
            .large_radii
            .iter()
            .zip(self.large_dirs.chunks_exact(self.dim))
            .map(|(&r, u)| g(r, u))
            .collect();
        let value = w * ys.iter().sum::<f64>();
        let pair_sq: f64 = ys.chunks_exact(2).map(|p| (p[0] - p[1]).powi(2)).sum();
        JumpValue {
            value,
            stderr: w * pair_sq.sqrt(),
        }
    }

    /// Jump part of the generator at `x`, given `f(x)` and the Laplacian.
    /// The compensator cancels between `z` and `-z`, so no gradient enters.
    pub fn generator_jump(
        &self,
        f: &dyn Fn(&[f64]) -> f64,
        x: &[f64],
        fx: f64,
        laplacian: f64,
    ) -> JumpValue {
        let mut buf = vec![0.0; self.dim];
        let mut sym = |r: f64, u: &[f64]| {
            for ((b, xi), ui) in buf.iter_mut().zip(x).zip(u) {
                *b = xi + r * ui;
            }
            let plus = f(&buf);
            for ((b, xi), ui) in buf.iter_mut().zip(x).zip(u) {
                *b = xi - r * ui;
            }
            0.5 * (plus + f(&buf)) - fx
        };
        let small = 0.5 * laplacian * self.small_factor;
        let ring = self.ring_sum(&mut sym);
        let large = self.large_sum(&mut sym);
        JumpValue {
            value: self.levy_constant * (small + ring + large.value),
            stderr: self.levy_constant * large.stderr,
        }
    }

    /// `int [f(x+z) - f(x)]^2 nu(dz)` over `|z| <= outer_radius`.
    pub fn carre_du_champ(
        &self,
        f: &dyn Fn(&[f64]) -> f64,
        x: &[f64],
        fx: f64,
        grad: &[f64],
    ) -> JumpValue {
        let mut buf = vec![0.0; self.dim];
        let mut sq = |r: f64, u: &[f64]| {
            for ((b, xi), ui) in buf.iter_mut().zip(x).zip(u) {
                *b = xi + r * ui;
            }
            let plus = f(&buf) - fx;
            for ((b, xi), ui) in buf.iter_mut().zip(x).zip(u) {
                *b = xi - r * ui;
            }
            let minus = f(&buf) - fx;
            0.5 * (plus * plus + minus * minus)
        };
        let small = dot(grad, grad) * self.small_factor;
        let ring = self.ring_sum(&mut sq);
        let large = self.large_sum(&mut sq);
        JumpValue {
            value: self.levy_constant * (small + ring + large.value),
            stderr: self.levy_constant * large.stderr,
        }
    }
}

/// Central-difference gradient with step [`GRAD_STEP`].
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + GRAD_STEP;
            let up = f(&buf);
            buf[i] = x[i] - GRAD_STEP;
            let down = f(&buf);
            buf[i] = x[i];
            (up - down) / (2.0 * GRAD_STEP)
        })
        .collect()
}

/// Central-difference Laplacian with step [`HESS_STEP`].
pub fn fd_laplacian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], fx: f64) -> f64 {
    let mut buf = x.to_vec();
    let h2 = HESS_STEP * HESS_STEP;
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + HESS_STEP;
            let up = f(&buf);
            buf[i] = x[i] - HESS_STEP;
            let down = f(&buf);
            buf[i] = x[i];
            (up - 2.0 * fx + down) / h2
        })
        .sum()
}

/// Generator output split into its parts. `stderr` is the sampling error of
/// the large-jump part; `refinement_change` is the shift seen when the inner
/// cutoff is halved (zero when the check is skipped).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorValue {
    pub value: f64,
    pub drift_term: f64,
    pub jump_term: f64,
    pub stderr: f64,
    pub refinement_change: f64,
}

/// The generator of the SDE, with quadratures for the configured inner
/// cutoff and for half of it.
#[derive(Debug, Clone)]
pub struct Generator {
    model: DriftModel,
    coarse: JumpQuadrature,
    fine: JumpQuadrature,
    refine_tolerance: f64,
}

impl Generator {
    pub fn new(model: &DriftModel, noise: &StableNoise, quad: &QuadratureConfig) -> Result<Self> {
        let coarse = JumpQuadrature::new(noise, quad)?;
        let fine =
            JumpQuadrature::with_cutoffs(noise, quad, quad.inner_cutoff / 2.0, quad.outer_radius)?;
        Ok(Self {
            model: model.clone(),
            coarse,
            fine,
            refine_tolerance: quad.refine_tolerance,
        })
    }

    pub fn quadrature(&self) -> &JumpQuadrature {
        &self.coarse
    }

    /// `A f(x)` without the refinement check.
    pub fn apply_unchecked(&self, f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> GeneratorValue {
        let fx = f(x);
        let grad = fd_gradient(f, x);
        let lap = fd_laplacian(f, x, fx);
        let drift_term = dot(&self.model.eval(x), &grad);
        let jump = self.coarse.generator_jump(f, x, fx, lap);
        GeneratorValue {
            value: drift_term + jump.value,
            drift_term,
            jump_term: jump.value,
            stderr: jump.stderr,
            refinement_change: 0.0,
        }
    }

    /// `A f(x)`; fails when halving the inner cutoff moves the result by more
    /// than `refine_tolerance * max(1, |A f(x)|)`.
    pub fn apply(&self, f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Result<GeneratorValue> {
        let mut out = self.apply_unchecked(f, x);
        let fx = f(x);
        let lap = fd_laplacian(f, x, fx);
        let refined = self.fine.generator_jump(f, x, fx, lap).value;
        out.refinement_change = (refined - out.jump_term).abs();
        if out.refinement_change > self.refine_tolerance * out.value.abs().max(1.0) {
            return Err(Error::Quadrature(format!(
                "generator at {x:?} moved by {:.3e} when the inner cutoff was halved",
                out.refinement_change
            )));
        }
        Ok(out)
    }
}

/// `A f(x)` with finite-difference derivatives of `f`.
pub fn apply_generator(
    model: &DriftModel,
    noise: &StableNoise,
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    quad: &QuadratureConfig,
) -> Result<f64> {
    if x.len() != noise.dim() {
        return Err(Error::Dimension {
            expected: noise.dim(),
            got: x.len(),
        });
    }
    Ok(Generator::new(model, noise, quad)?.apply(f, x)?.value)
}
