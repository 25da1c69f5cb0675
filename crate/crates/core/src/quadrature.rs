//! Numerical integration primitives and the shared quadrature settings.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Settings for every numerical integral in the crate: the split quadrature
/// of the jump integrals and the Fourier inversion of the stable CDF.
///
/// The jump measure is integrated in three pieces: a closed-form
/// second-order Taylor surrogate on `|z| <= inner_cutoff`, deterministic
/// Gauss-Legendre quadrature on `inner_cutoff < |z| <= 1`, and stratified
/// importance sampling on `1 < |z| <= outer_radius`. Jumps beyond
/// `outer_radius` are dropped.
///
/// `cdf_tolerance` is the absolute error target of the characteristic
/// function inversion (default `1e-6`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub inner_cutoff: f64,
    pub outer_radius: f64,
    pub n_jump_samples: usize,
    pub cdf_tolerance: f64,
    /// Allowed change when the inner cutoff is halved, relative to
    /// `max(1, |result|)`.
    pub refine_tolerance: f64,
    /// Gauss-Legendre panels (8 nodes each) on the log-scaled ring.
    pub ring_panels: usize,
    /// Directions used on the unit sphere when `dim > 1`.
    pub n_directions: usize,
    pub seed: u64,
    /// Relative growth of the variance formula between `outer_radius` and
    /// twice that radius above which the estimate is flagged as diverging.
    pub divergence_threshold: f64,
    /// Cap on the invariant-measure points used for the outer average of
    /// the variance formula (evenly thinned).
    pub max_outer_points: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            inner_cutoff: 1e-3,
            outer_radius: 100.0,
            n_jump_samples: 2048,
            cdf_tolerance: 1e-6,
            refine_tolerance: 1e-6,
            ring_panels: 64,
            n_directions: 64,
            seed: 0x5eed,
            divergence_threshold: 0.25,
            max_outer_points: 2000,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_cutoff > 0.0 && self.inner_cutoff < 1.0) {
            return Err(Error::Domain(format!(
                "inner_cutoff must lie in (0, 1), got {}",
                self.inner_cutoff
            )));
        }
        if !(self.outer_radius > 1.0 && self.outer_radius.is_finite()) {
            return Err(Error::Domain(format!(
                "outer_radius must be finite and > 1, got {}",
                self.outer_radius
            )));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Domain("divergence_threshold must be positive".into()));
        }
        if self.n_jump_samples == 0
            || self.ring_panels == 0
            || self.n_directions == 0
            || self.max_outer_points == 0
        {
            return Err(Error::Domain(
                "n_jump_samples, ring_panels, n_directions and max_outer_points must be positive"
                    .into(),
            ));
        }
        if !(self.cdf_tolerance > 0.0) || !(self.refine_tolerance > 0.0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];

pub(crate) const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Composite 8-point Gauss-Legendre nodes and weights on `[a, b]`.
pub(crate) fn gauss_legendre_composite(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let width = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * 8);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * width;
        for (node, weight) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
            out.push((mid + 0.5 * width * node, 0.5 * width * weight));
        }
    }
    out
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    (value, err)
}

#[derive(PartialEq)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive Gauss-Kronrod (7/15) integration of `f` on `[a, b]`.
///
/// The interval is first cut into `initial_panels` equal pieces; the panel
/// with the largest error estimate is then bisected until the summed error
/// drops below `abs_tol` or `max_panels` is reached. Returns
/// `(value, error_estimate)`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    initial_panels: usize,
    max_panels: usize,
) -> Result<(f64, f64)> {
    if a == b {
        return Ok((0.0, 0.0));
    }
    let n0 = initial_panels.max(1);
    let width = (b - a) / n0 as f64;
    let mut heap = BinaryHeap::with_capacity(n0 * 2);
    let mut total = 0.0;
    let mut total_err = 0.0;
    for i in 0..n0 {
        let lo = a + i as f64 * width;
        let hi = if i + 1 == n0 { b } else { lo + width };
        let (value, err) = gk15(&f, lo, hi);
        total += value;
        total_err += err;
        heap.push(Panel {
            a: lo,
            b: hi,
            value,
            err,
        });
    }
    while total_err > abs_tol {
        if heap.len() >= max_panels.max(n0) {
            return Err(Error::Quadrature(format!(
                "adaptive integration on [{a}, {b}] stalled at error {total_err:e} (target {abs_tol:e})"
            )));
        }
        let worst = heap.pop().expect("heap is never empty here");
        let mid = 0.5 * (worst.a + worst.b);
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.err;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            err: e1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            err: e2,
        });
        // Re-sum occasionally so cancellation in the running totals cannot
        // mask the true error.
        if heap.len() % 256 == 0 {
            total = heap.iter().map(|p| p.value).sum();
            total_err = heap.iter().map(|p| p.err).sum();
        }
    }
    Ok((total, total_err))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let (v, _) = integrate_adaptive(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12, 1, 10).unwrap();
        assert!((v - 0.0).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_integral() {
        // int_0^pi sin(50 x) dx = (1 - cos(50 pi)) / 50 = 0
        let (v, _) =
            integrate_adaptive(|x| (50.0 * x).sin(), 0.0, std::f64::consts::PI, 1e-10, 4, 4096)
                .unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn stalls_report_error() {
        let r = integrate_adaptive(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-300, 1, 8);
        assert!(matches!(r, Err(Error::Quadrature(_))));
    }

    #[test]
    fn gauss_legendre_integrates_degree_15() {
        let rule = gauss_legendre_composite(-1.0, 3.0, 3);
        let v: f64 = rule.iter().map(|(x, w)| w * x.powi(15)).sum();
        let exact = (3f64.powi(16) - 1.0) / 16.0;
        assert!((v - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn config_validation() {
        assert!(QuadratureConfig::default().validate().is_ok());
        let bad = QuadratureConfig {
            outer_radius: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
