//! Experiment configuration: a TOML file with serde defaults, validated
//! field by field before anything runs.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::noise::StableNoise;
use crate::quadrature::QuadratureConfig;
use crate::sde::{DriftKind, DriftModel, Scheme, TestFunction, TestKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Invariant,
    Poisson,
    Variance,
    Clt,
    Stable,
    Scan,
    PhaseDiagram,
}

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Analysis::Invariant => "invariant",
            Analysis::Poisson => "poisson",
            Analysis::Variance => "variance",
            Analysis::Clt => "clt",
            Analysis::Stable => "stable",
            Analysis::Scan => "scan",
            Analysis::PhaseDiagram => "phase-diagram",
        }
    }

    /// Adds prerequisites: poisson needs the invariant sample, variance needs
    /// the Poisson solution in one dimension.
    pub fn closure(requested: &[Analysis], dim: usize) -> BTreeSet<Analysis> {
        let mut set: BTreeSet<Analysis> = requested.iter().copied().collect();
        if set.contains(&Analysis::Variance) && dim == 1 {
            set.insert(Analysis::Poisson);
        }
        if set.contains(&Analysis::Poisson) {
            set.insert(Analysis::Invariant);
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionName {
    Sin,
    Identity,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub kind: DriftKind,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub k1: Option<f64>,
    #[serde(default)]
    pub k2: Option<f64>,
    #[serde(default)]
    pub ell: Option<f64>,
    /// Required for `custom`; one-dimensional only.
    #[serde(default)]
    pub expression: Option<String>,
    /// Declares `b(-x) = -b(x)` for a custom drift.
    #[serde(default)]
    pub odd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionConfig {
    pub kind: TestKind,
    pub name: TestFunctionName,
    #[serde(default)]
    pub expression: Option<String>,
    /// Sup bound or Lipschitz constant of a custom expression.
    #[serde(default)]
    pub bound_or_lip: Option<f64>,
    #[serde(default)]
    pub odd: bool,
}

impl Default for TestFunctionConfig {
    fn default() -> Self {
        Self {
            kind: TestKind::Bounded,
            name: TestFunctionName::Sin,
            expression: None,
            bound_or_lip: None,
            odd: false,
        }
    }
}

fn default_dt() -> f64 {
    0.01
}
fn default_horizon() -> f64 {
    200.0
}
fn default_replicas() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Time `t` of the limit-test replicas and of `simulate`.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Burn-in of the long runs; 20% of each run's horizon when absent.
    #[serde(default)]
    pub burn_in: Option<f64>,
    #[serde(default = "default_replicas")]
    pub n_replicas: usize,
    #[serde(default)]
    pub root_seed: Option<u64>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Recording stride of `simulate`.
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub which: Vec<Analysis>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            which: vec![Analysis::Invariant],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvariantSection {
    pub horizon: f64,
    pub n_chains: usize,
    pub stride: usize,
    pub antithetic: bool,
    pub xi_grid: Vec<f64>,
}

impl Default for InvariantSection {
    fn default() -> Self {
        Self {
            horizon: 2000.0,
            n_chains: 8,
            stride: 10,
            antithetic: true,
            xi_grid: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoissonSection {
    pub n_paths: usize,
    pub grid_points: usize,
    pub quantiles: [f64; 2],
    pub wing_points: usize,
    /// Wing extent; twice the quadrature outer radius when absent.
    pub wing_extent: Option<f64>,
    pub n_batches: usize,
    pub checkpoint: f64,
    pub consecutive: usize,
    pub max_horizon: f64,
    pub floor: f64,
    /// Fixed truncation horizon; adaptive truncation when absent.
    pub fixed_horizon: Option<f64>,
    pub antithetic: bool,
    pub residual_margin: f64,
    pub residual_check: bool,
}

impl Default for PoissonSection {
    fn default() -> Self {
        Self {
            n_paths: 512,
            grid_points: crate::poisson::DEFAULT_GRID_POINTS,
            quantiles: [
                crate::poisson::DEFAULT_GRID_QUANTILES.0,
                crate::poisson::DEFAULT_GRID_QUANTILES.1,
            ],
            wing_points: 16,
            wing_extent: None,
            n_batches: 16,
            checkpoint: 0.5,
            consecutive: 5,
            max_horizon: 50.0,
            floor: 1e-6,
            fixed_horizon: None,
            antithetic: true,
            residual_margin: 1.0,
            residual_check: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceSection {
    pub horizon: f64,
    pub n_batches: usize,
}

impl Default for VarianceSection {
    fn default() -> Self {
        Self {
            horizon: 2e5,
            n_batches: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitSection {
    /// Time of the stable-scaled replicas; `sim.horizon` when absent.
    pub stable_t: Option<f64>,
    pub xi_grid: Vec<f64>,
}

impl Default for LimitSection {
    fn default() -> Self {
        Self {
            stable_t: None,
            xi_grid: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub t_grid: Vec<f64>,
    pub n_replicas: usize,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            t_grid: vec![64.0, 128.0, 256.0, 512.0],
            n_replicas: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseDiagramSection {
    /// Drift exponents; `{0, (1-a/2)/2, 1-a/2+0.35}` when absent.
    pub thetas: Option<Vec<f64>>,
    pub gaussian_t: f64,
    pub stable_t: f64,
    /// Replicas of each distribution test; `sim.n_replicas` when absent.
    pub n_replicas: Option<usize>,
    pub scan_t_grid: Vec<f64>,
    pub scan_replicas: usize,
    pub variance_horizon: f64,
    pub variance_batches: usize,
}

impl Default for PhaseDiagramSection {
    fn default() -> Self {
        Self {
            thetas: None,
            gaussian_t: 200.0,
            stable_t: 500.0,
            n_replicas: None,
            scan_t_grid: vec![64.0, 128.0, 256.0, 512.0],
            scan_replicas: 1000,
            variance_horizon: 2e5,
            variance_batches: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSampleSection {
    pub n: usize,
    pub dt: f64,
}

impl Default for NoiseSampleSection {
    fn default() -> Self {
        Self { n: 100_000, dt: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alpha: f64,
    #[serde(default = "one")]
    pub dim: usize,
    pub drift: DriftConfig,
    #[serde(default)]
    pub test_function: TestFunctionConfig,
    pub sim: SimSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub invariant: InvariantSection,
    #[serde(default)]
    pub poisson: PoissonSection,
    #[serde(default)]
    pub variance: VarianceSection,
    #[serde(default)]
    pub limit: LimitSection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub phase_diagram: PhaseDiagramSection,
    #[serde(default)]
    pub noise_samples: NoiseSampleSection,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

fn one() -> usize {
    1
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive and finite, got {v}")))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be >= {min}, got {v}")))
    }
}

fn xi_grid(field: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::config(field, "must be a non-empty list of finite values"));
    }
    Ok(())
}

fn t_grid(field: &str, ts: &[f64]) -> Result<()> {
    if ts.len() < 2 || ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::config(field, "needs at least two positive times"));
    }
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(field, "must be strictly increasing"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| {
            let msg = e.message().to_string();
            // Missing-field messages name the field; fall back to the whole file.
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<file>".into());
            Error::config(field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        Self::from_toml_str(&src)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return Err(Error::config(
                "alpha",
                format!("must lie in (1, 2), got {}", self.alpha),
            ));
        }
        at_least("dim", self.dim, 1)?;
        self.validate_drift()?;
        self.validate_test_function()?;

        let sim = &self.sim;
        if sim.root_seed.is_none() {
            return Err(Error::config("sim.root_seed", "is mandatory"));
        }
        positive("sim.dt", sim.dt)?;
        positive("sim.horizon", sim.horizon)?;
        if sim.dt > sim.horizon {
            return Err(Error::config("sim.dt", "must not exceed sim.horizon"));
        }
        if let Some(b) = sim.burn_in {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::config("sim.burn_in", format!("must be >= 0, got {b}")));
            }
            for (field, horizon) in [
                ("invariant.horizon", self.invariant.horizon),
                ("variance.horizon", self.variance.horizon),
            ] {
                if b >= horizon {
                    return Err(Error::config(
                        "sim.burn_in",
                        format!("must be below {field} = {horizon}"),
                    ));
                }
            }
        }
        at_least("sim.n_replicas", sim.n_replicas, crate::limit::MIN_REPLICAS)?;
        at_least("sim.record_stride", sim.record_stride, 1)?;
        if let Some(x0) = &sim.x0 {
            if x0.len() != self.dim {
                return Err(Error::config(
                    "sim.x0",
                    format!("has {} coordinates, dim is {}", x0.len(), self.dim),
                ));
            }
            if x0.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("sim.x0", "must be finite"));
            }
        }

        if self.analysis.which.is_empty() {
            return Err(Error::config("analysis.which", "must name at least one analysis"));
        }
        let needs_1d = [Analysis::Poisson, Analysis::PhaseDiagram];
        if self.dim != 1 {
            if let Some(a) = self.analysis.which.iter().find(|a| needs_1d.contains(a)) {
                return Err(Error::config(
                    "analysis.which",
                    format!("`{}` is implemented for dim = 1 only", a.name()),
                ));
            }
        }

        let inv = &self.invariant;
        positive("invariant.horizon", inv.horizon)?;
        at_least("invariant.n_chains", inv.n_chains, 1)?;
        at_least("invariant.stride", inv.stride, 1)?;
        xi_grid("invariant.xi_grid", &inv.xi_grid)?;

        let p = &self.poisson;
        at_least("poisson.n_paths", p.n_paths, 2)?;
        at_least("poisson.grid_points", p.grid_points, 4)?;
        if !(p.quantiles[0] > 0.0 && p.quantiles[0] < p.quantiles[1] && p.quantiles[1] < 1.0) {
            return Err(Error::config(
                "poisson.quantiles",
                "must satisfy 0 < lo < hi < 1",
            ));
        }
        if let Some(w) = p.wing_extent {
            positive("poisson.wing_extent", w)?;
        }
        at_least("poisson.n_batches", p.n_batches, 2)?;
        if p.n_paths % p.n_batches != 0 {
            return Err(Error::config(
                "poisson.n_paths",
                format!("must be a multiple of poisson.n_batches = {}", p.n_batches),
            ));
        }
        positive("poisson.checkpoint", p.checkpoint)?;
        at_least("poisson.consecutive", p.consecutive, 1)?;
        positive("poisson.max_horizon", p.max_horizon)?;
        if !(p.floor >= 0.0 && p.floor.is_finite()) {
            return Err(Error::config("poisson.floor", "must be >= 0"));
        }
        if let Some(h) = p.fixed_horizon {
            positive("poisson.fixed_horizon", h)?;
        }
        if !(p.residual_margin >= 0.0 && p.residual_margin.is_finite()) {
            return Err(Error::config("poisson.residual_margin", "must be >= 0"));
        }

        positive("variance.horizon", self.variance.horizon)?;
        at_least(
            "variance.n_batches",
            self.variance.n_batches,
            crate::variance::MIN_BATCHES,
        )?;

        if let Some(t) = self.limit.stable_t {
            positive("limit.stable_t", t)?;
        }
        xi_grid("limit.xi_grid", &self.limit.xi_grid)?;

        t_grid("scan.t_grid", &self.scan.t_grid)?;
        at_least("scan.n_replicas", self.scan.n_replicas, crate::limit::MIN_REPLICAS)?;

        let pd = &self.phase_diagram;
        if let Some(thetas) = &pd.thetas {
            if thetas.is_empty() || thetas.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
                return Err(Error::config(
                    "phase_diagram.thetas",
                    "must be a non-empty list of values >= 0",
                ));
            }
        }
        positive("phase_diagram.gaussian_t", pd.gaussian_t)?;
        positive("phase_diagram.stable_t", pd.stable_t)?;
        if let Some(n) = pd.n_replicas {
            at_least("phase_diagram.n_replicas", n, crate::limit::MIN_REPLICAS)?;
        }
        t_grid("phase_diagram.scan_t_grid", &pd.scan_t_grid)?;
        at_least(
            "phase_diagram.scan_replicas",
            pd.scan_replicas,
            crate::limit::MIN_REPLICAS,
        )?;
        positive("phase_diagram.variance_horizon", pd.variance_horizon)?;
        at_least(
            "phase_diagram.variance_batches",
            pd.variance_batches,
            crate::variance::MIN_BATCHES,
        )?;

        at_least("noise_samples.n", self.noise_samples.n, 1)?;
        positive("noise_samples.dt", self.noise_samples.dt)?;

        self.quadrature
            .validate()
            .map_err(|e| Error::config("quadrature", e.to_string()))?;
        Ok(())
    }

    fn validate_drift(&self) -> Result<()> {
        let d = &self.drift;
        if !(d.theta >= 0.0 && d.theta.is_finite()) {
            return Err(Error::config(
                "drift.theta",
                format!("must be >= 0, got {}", d.theta),
            ));
        }
        for (field, v) in [("drift.k1", d.k1), ("drift.k2", d.k2), ("drift.ell", d.ell)] {
            if let Some(v) = v {
                positive(field, v)?;
            }
        }
        match d.kind {
            DriftKind::PowerDrift => {
                if d.expression.is_some() {
                    return Err(Error::config(
                        "drift.expression",
                        "only valid with kind = \"custom\"",
                    ));
                }
            }
            DriftKind::Custom => {
                if self.dim != 1 {
                    return Err(Error::config("drift.kind", "custom drift needs dim = 1"));
                }
                let src = d
                    .expression
                    .as_deref()
                    .ok_or_else(|| Error::config("drift.expression", "required for a custom drift"))?;
                Expr::parse(src, 1).map_err(|e| Error::config("drift.expression", e.to_string()))?;
                for (field, v) in [("drift.k1", d.k1), ("drift.k2", d.k2), ("drift.ell", d.ell)] {
                    if v.is_none() {
                        return Err(Error::config(field, "required for a custom drift"));
                    }
                }
                if self.sim.scheme == Scheme::SemiImplicit {
                    return Err(Error::config(
                        "sim.scheme",
                        "semi_implicit needs the power drift; use tamed_euler",
                    ));
                }
            }
        }
        Ok(())
    }

    fn validate_test_function(&self) -> Result<()> {
        let t = &self.test_function;
        match t.name {
            TestFunctionName::Sin if t.kind != TestKind::Bounded => Err(Error::config(
                "test_function.kind",
                "sin is a bounded test function",
            )),
            TestFunctionName::Identity if t.kind != TestKind::Lipschitz => Err(Error::config(
                "test_function.kind",
                "identity is a Lipschitz test function",
            )),
            TestFunctionName::Custom => {
                let src = t.expression.as_deref().ok_or_else(|| {
                    Error::config("test_function.expression", "required for a custom test function")
                })?;
                Expr::parse(src, self.dim)
                    .map_err(|e| Error::config("test_function.expression", e.to_string()))?;
                match t.bound_or_lip {
                    Some(v) if v >= 0.0 && v.is_finite() => Ok(()),
                    _ => Err(Error::config(
                        "test_function.bound_or_lip",
                        "required for a custom test function and must be >= 0",
                    )),
                }
            }
            _ => Ok(()),
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.sim.root_seed.expect("validated")
    }

    pub fn noise(&self) -> Result<StableNoise> {
        StableNoise::new(self.alpha, self.dim)
    }

    pub fn drift_model(&self) -> Result<DriftModel> {
        let d = &self.drift;
        match d.kind {
            DriftKind::PowerDrift => match (d.k1, d.k2, d.ell) {
                (None, None, None) => DriftModel::power(d.theta),
                (k1, k2, ell) => DriftModel::power_with_constants(
                    d.theta,
                    k1.unwrap_or(1.0),
                    k2.unwrap_or(2f64.powf(-d.theta)),
                    ell.unwrap_or(1.0),
                ),
            },
            DriftKind::Custom => {
                let expr = Expr::parse(d.expression.as_deref().unwrap_or_default(), 1)?;
                Ok(DriftModel::custom(
                    d.theta,
                    d.k1.unwrap_or(1.0),
                    d.k2.unwrap_or(1.0),
                    d.ell.unwrap_or(1.0),
                    move |x, out| out[0] = expr.eval(x),
                )?
                .with_odd_symmetry(d.odd))
            }
        }
    }

    pub fn test_function(&self) -> Result<TestFunction> {
        let t = &self.test_function;
        match t.name {
            TestFunctionName::Sin => Ok(TestFunction::sin()),
            TestFunctionName::Identity => Ok(TestFunction::identity()),
            TestFunctionName::Custom => {
                let src = t.expression.clone().unwrap_or_default();
                let expr = Expr::parse(&src, self.dim)?;
                TestFunction::new(t.kind, t.bound_or_lip.unwrap_or(0.0), src, move |x| {
                    expr.eval(x)
                })
            }
        }
    }

    /// Whether `h - mu(h)` integrates to zero by symmetry, so limit tests can
    /// center at 0 without estimating `mu(h)`.
    pub fn symmetric_center(&self) -> bool {
        let odd_h = match self.test_function.name {
            TestFunctionName::Sin | TestFunctionName::Identity => true,
            TestFunctionName::Custom => self.test_function.odd,
        };
        let odd_b = match self.drift.kind {
            DriftKind::PowerDrift => true,
            DriftKind::Custom => self.drift.odd,
        };
        odd_h && odd_b && self.sim.x0.as_ref().is_none_or(|x| x.iter().all(|v| *v == 0.0))
    }

    pub fn x0(&self) -> Vec<f64> {
        self.sim.x0.clone().unwrap_or_else(|| vec![0.0; self.dim])
    }

    pub fn burn_in_for(&self, horizon: f64) -> f64 {
        self.sim
            .burn_in
            .unwrap_or(crate::sde::DEFAULT_BURN_IN_FRACTION * horizon)
    }

    pub fn stable_t(&self) -> f64 {
        self.limit.stable_t.unwrap_or(self.sim.horizon)
    }

    /// Default exponents `{0, (1-a/2)/2, 1-a/2+0.35}`.
    pub fn phase_thetas(&self) -> Vec<f64> {
        self.phase_diagram.thetas.clone().unwrap_or_else(|| {
            let edge = 1.0 - self.alpha / 2.0;
            vec![0.0, edge / 2.0, edge + 0.35]
        })
    }

    /// Canonical JSON with sorted keys.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON; formatting of the TOML source does not
    /// affect it.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&self.to_json_value()).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
