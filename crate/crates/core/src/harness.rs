//! Experiment orchestration: runs the configured analyses in dependency
//! order and writes hash-stamped CSV/JSON artifacts plus a plain-text
//! summary.
//!
//! JSON artifacts carry no wall-clock data, so equal configs produce
//! byte-identical JSON. Timings go to `summary.txt` only.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Analysis, ExperimentConfig};
use crate::ergodics::{sample_invariant, EmpiricalMeasure, InvariantConfig};
use crate::error::{Error, Result};
use crate::limit::{
    cf_distance_test, ks_gaussian_test, ks_stable_test, replicate_scaled_statistic,
    scaling_exponent_scan, Decision, LimitTarget, LimitVerdict, ReplicaConfig, ScaledSample,
    ScanResult,
};
use crate::noise::StableNoise;
use crate::poisson::{
    poisson_residual, poisson_solve_mc, PoissonConfig, PoissonGrid, PoissonSolution,
    ResidualReport, Truncation,
};
use crate::rng::RngStream;
use crate::sde::{steps_for, DriftModel, SimConfig, TestFunction, TestKind};
use crate::stats;
use crate::variance::{variance_batch_means, variance_formula, BatchMeansConfig, VarianceEstimate};

pub const THREADS_ENV: &str = "STABLELAB_THREADS";
pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.txt";

// Stream ids of the analyses; phase-diagram cells use PHASE_STREAM + 16 * cell + k.
const INVARIANT_STREAM: u64 = 1;
const POISSON_STREAM: u64 = 2;
const BATCH_STREAM: u64 = 3;
const CLT_STREAM: u64 = 4;
const STABLE_STREAM: u64 = 5;
const SCAN_STREAM: u64 = 6;
const NOISE_STREAM: u64 = 7;
const PATH_STREAM: u64 = 8;
const PHASE_STREAM: u64 = 1000;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output_dir` of the config.
    pub out_dir: Option<PathBuf>,
    pub force: bool,
    pub threads: Option<usize>,
}

/// `--threads` wins over the environment variable; `None` keeps rayon's
/// default pool.
pub fn resolve_threads(cli: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = cli {
        if n == 0 {
            return Err(Error::config("--threads", "must be >= 1"));
        }
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::config(THREADS_ENV, format!("expected a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `f` inside a worker pool of the resolved size.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match resolve_threads(threads)? {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Writes artifacts into one directory, stamping each with the config hash.
pub struct ArtifactWriter {
    dir: PathBuf,
    hash: String,
    config: Value,
    files: BTreeSet<String>,
}

impl ArtifactWriter {
    /// Refuses a directory whose manifest names a different config hash
    /// unless `force` is set.
    pub fn open(dir: &Path, cfg: &ExperimentConfig, force: bool) -> Result<Self> {
        let hash = cfg.hash();
        let manifest = dir.join(MANIFEST);
        if manifest.exists() && !force {
            let text = std::fs::read_to_string(&manifest)?;
            let existing = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.get("config_hash").and_then(Value::as_str).map(String::from))
                .unwrap_or_else(|| "<unreadable>".into());
            if existing != hash {
                return Err(Error::HashMismatch {
                    dir: dir.display().to_string(),
                    existing,
                    current: hash,
                });
            }
        }
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::from(e).context(format!("creating {}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash,
            config: cfg.to_json_value(),
            files: BTreeSet::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)
            .map_err(|e| Error::from(e).context(format!("writing {}", path.display())))?;
        self.files.insert(name.to_string());
        Ok(path)
    }

    /// Pretty JSON with sorted keys; `payload` fields sit next to
    /// `config_hash` and the full `config` echo.
    pub fn json(&mut self, name: &str, payload: Value) -> Result<PathBuf> {
        let mut obj = match payload {
            Value::Object(m) => m,
            other => {
                let mut m = serde_json::Map::new();
                m.insert("data".into(), other);
                m
            }
        };
        obj.insert("config_hash".into(), Value::String(self.hash.clone()));
        obj.insert("config".into(), self.config.clone());
        let mut text = serde_json::to_string_pretty(&Value::Object(obj))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// CSV whose first line is `# config_hash: <hex>`.
    pub fn csv<F>(&mut self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        writeln!(buf, "# config_hash: {}", self.hash)?;
        body(&mut buf)?;
        self.write(name, &buf)
    }

    /// Writes the summary and the manifest; returns the sorted file list.
    pub fn finish(mut self, summary: &str) -> Result<Vec<String>> {
        let text = format!("config_hash: {}\n{summary}", self.hash);
        self.write(SUMMARY, text.as_bytes())?;
        let mut files: Vec<String> = self.files.iter().cloned().collect();
        files.push(MANIFEST.into());
        files.sort();
        let manifest = json!({ "config_hash": self.hash, "files": files });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        self.write(MANIFEST, text.as_bytes())?;
        Ok(files)
    }
}

/// Typed results of one run, alongside the files on disk.
#[derive(Debug, Default)]
pub struct RunResults {
    pub invariant: Option<EmpiricalMeasure>,
    pub mu_h: Option<(f64, f64)>,
    pub poisson: Option<PoissonSolution>,
    pub residual: Option<ResidualReport>,
    pub variance_formula: Option<VarianceEstimate>,
    pub variance_batch_means: Option<VarianceEstimate>,
    pub clt: Option<LimitVerdict>,
    pub stable_cf: Option<LimitVerdict>,
    pub stable_ks: Option<LimitVerdict>,
    pub scan: Option<ScanResult>,
    pub phase_diagram: Option<PhaseDiagramReport>,
}

#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub files: Vec<String>,
    pub summary: String,
    pub steps: u64,
    pub wall_clock: Duration,
    pub results: RunResults,
}

fn out_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out_dir
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("stablelab-out"))
}

/// Loads the config at `path` and runs the analyses it lists.
pub fn run_experiment(path: &Path, opts: &RunOptions) -> Result<RunReport> {
    let cfg = ExperimentConfig::load(path)?;
    let which = cfg.analysis.which.clone();
    run_analyses(&cfg, &which, opts)
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    model: DriftModel,
    noise: StableNoise,
    h: TestFunction,
    seed: u64,
    summary: String,
    steps: u64,
}

impl Ctx<'_> {
    fn stream(&self, id: u64) -> RngStream {
        RngStream::new(self.seed, id)
    }

    fn log(&mut self, name: &str, started: Instant, steps: u64, detail: String) {
        self.steps += steps;
        let _ = writeln!(
            self.summary,
            "[{name}] {detail}\n  steps: {steps}  wall-clock: {:.2} s",
            started.elapsed().as_secs_f64()
        );
    }

    fn replica_config(&self) -> ReplicaConfig {
        ReplicaConfig {
            x0: self.cfg.x0(),
            dt: self.cfg.sim.dt,
            scheme: self.cfg.sim.scheme,
        }
    }

    fn batch_config(&self) -> BatchMeansConfig {
        let v = &self.cfg.variance;
        BatchMeansConfig {
            x0: self.cfg.x0(),
            horizon: v.horizon,
            burn_in: self.cfg.burn_in_for(v.horizon),
            dt: self.cfg.sim.dt,
            n_batches: v.n_batches,
            scheme: self.cfg.sim.scheme,
        }
    }
}

fn describe(v: &LimitVerdict) -> String {
    format!(
        "{:?} statistic {:.5} vs {:.5} (n = {}): {:?}{}",
        v.test,
        v.statistic,
        v.p_value_or_threshold,
        v.n,
        v.decision,
        v.label.as_ref().map(|l| format!(" [{l}]")).unwrap_or_default()
    )
}

fn ctx_err(name: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| e.context(format!("{name} analysis"))
}

/// Runs `requested` (plus prerequisites) in dependency order and writes all
/// artifacts to the output directory.
pub fn run_analyses(
    cfg: &ExperimentConfig,
    requested: &[Analysis],
    opts: &RunOptions,
) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let dir = out_dir(cfg, opts);
    let mut art = ArtifactWriter::open(&dir, cfg, opts.force)?;
    let mut set = Analysis::closure(requested, cfg.dim);
    let needs_center = [Analysis::Clt, Analysis::Stable, Analysis::Scan];
    if !cfg.symmetric_center() && set.iter().any(|a| needs_center.contains(a)) {
        set.insert(Analysis::Invariant);
    }
    let mut ctx = Ctx {
        cfg,
        model: cfg.drift_model()?,
        noise: cfg.noise()?,
        h: cfg.test_function()?,
        seed: cfg.root_seed(),
        summary: String::new(),
        steps: 0,
    };
    let _ = writeln!(
        ctx.summary,
        "alpha {} dim {} drift {:?} theta {} h {} scheme {:?} root_seed {}",
        cfg.alpha,
        cfg.dim,
        cfg.drift.kind,
        cfg.drift.theta,
        ctx.h.name(),
        cfg.sim.scheme,
        ctx.seed
    );
    let mut res = RunResults::default();
    let results = with_threads(opts.threads, || -> Result<()> {
        for a in &set {
            match a {
                Analysis::Invariant => run_invariant(&mut ctx, &mut art, &mut res),
                Analysis::Poisson => run_poisson(&mut ctx, &mut art, &mut res),
                Analysis::Variance => run_variance(&mut ctx, &mut art, &mut res),
                Analysis::Clt => run_clt(&mut ctx, &mut art, &mut res),
                Analysis::Stable => run_stable(&mut ctx, &mut art, &mut res),
                Analysis::Scan => run_scan(&mut ctx, &mut art, &mut res),
                Analysis::PhaseDiagram => run_phase(&mut ctx, &mut art, &mut res),
            }
            .map_err(ctx_err(a.name()))?;
        }
        Ok(())
    })?;
    results?;
    finish(ctx, art, res, started)
}

fn finish(ctx: Ctx<'_>, art: ArtifactWriter, results: RunResults, started: Instant) -> Result<RunReport> {
    let wall_clock = started.elapsed();
    let mut summary = ctx.summary;
    let _ = writeln!(
        summary,
        "total steps: {}  total wall-clock: {:.2} s",
        ctx.steps,
        wall_clock.as_secs_f64()
    );
    let out_dir = art.dir().to_path_buf();
    let config_hash = art.hash().to_string();
    let files = art.finish(&summary)?;
    Ok(RunReport {
        out_dir,
        config_hash,
        files,
        summary,
        steps: ctx.steps,
        wall_clock,
        results,
    })
}

fn cf_table(xs: &[f64], xi_grid: &[f64], exact: impl Fn(f64) -> f64) -> Value {
    Value::Array(
        xi_grid
            .iter()
            .map(|&xi| {
                let (re, im) = stats::empirical_cf(xs, xi);
                json!({ "xi": xi, "re": re, "im": im, "reference": exact(xi) })
            })
            .collect(),
    )
}

fn quantile_table(xs: &[f64]) -> Value {
    let s = stats::sorted(xs);
    let mut m = serde_json::Map::new();
    for p in [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99] {
        m.insert(format!("q{p}"), json!(stats::quantile_sorted(&s, p)));
    }
    Value::Object(m)
}

fn run_invariant(ctx: &mut Ctx<'_>, art: &mut ArtifactWriter, res: &mut RunResults) -> Result<()> {
    let t0 = Instant::now();
    let cfg = ctx.cfg;
    let s = &cfg.invariant;
    let icfg = InvariantConfig {
        x0: cfg.x0(),
        horizon: s.horizon,
        dt: cfg.sim.dt,
        burn_in: cfg.burn_in_for(s.horizon),
        stride: s.stride,
        n_chains: s.n_chains,
        scheme: cfg.sim.scheme,
        antithetic: s.antithetic,
    };
    let mu = sample_invariant(&ctx.model, &ctx.noise, &icfg, &ctx.stream(INVARIANT_STREAM))?;
    let (m, se) = mu.mean_of(&ctx.h);
    let first: Vec<f64> = mu.iter().map(|p| p[0]).collect();
    // Closed-form stationary law for the linear drift b(x) = -x.
    let linear = cfg.drift.kind == crate::sde::DriftKind::PowerDrift
        && cfg.drift.theta == 0.0
        && cfg.drift.k1.is_none();
    let alpha = cfg.alpha;
    let reference = move |xi: f64| {
        if linear {
            (-(xi.abs().powf(alpha)) / alpha).exp()
        } else {
            f64::NAN
        }
    };
    art.json(
        "invariant.json",
        json!({
            "n_points": mu.len(),
            "source": mu.source,
            "mean_h": m,
            "mean_h_stderr": se,
            "cf_first_coordinate": cf_table(&first, &s.xi_grid, reference),
            "quantiles_first_coordinate": quantile_table(&first),
        }),
    )?;
    art.csv("invariant.csv", |w| mu.write_csv(w))?;
    let steps = s.n_chains as u64 * steps_for(s.horizon, cfg.sim.dt);
    ctx.log(
        "invariant",
        t0,
        steps,
        format!("{} points, mu(h) = {m:.5} +- {se:.5}", mu.len()),
    );
    res.mu_h = Some((m, se));
    res.invariant = Some(mu);
    Ok(())
}

fn run_poisson(ctx: &mut Ctx<'_>, art: &mut ArtifactWriter, res: &mut RunResults) -> Result<()> {
    let t0 = Instant::now();
    let cfg = ctx.cfg;
    let p = &cfg.poisson;
    let mu = res.invariant.as_ref().expect("invariant runs first");
    let (m, se) = res.mu_h.expect("invariant runs first");
    let extent = p
        .wing_extent
        .unwrap_or(2.0 * cfg.quadrature.outer_radius);
    let grid = PoissonGrid::from_measure(mu, p.grid_points, p.quantiles[0], p.quantiles[1])?
        .with_wings(p.wing_points, extent)?;
    let pcfg = PoissonConfig {
        dt: cfg.sim.dt,
        n_paths: p.n_paths,
        n_batches: p.n_batches,
        scheme: cfg.sim.scheme,
        antithetic: p.antithetic,
        checkpoint: p.checkpoint,
        truncation: match p.fixed_horizon {
            Some(horizon) => Truncation::Fixed { horizon },
            None => Truncation::Adaptive {
                consecutive: p.consecutive,
                max_horizon: p.max_horizon,
                floor: p.floor,
            },
        },
        mu_h: m,
        mu_h_stderr: se,
    };
    let fh = poisson_solve_mc(&ctx.model, &ctx.noise, &ctx.h, &grid, &pcfg, &ctx.stream(POISSON_STREAM))?;
    let residual = if p.residual_check {
        Some(poisson_residual(
            &fh,
            &ctx.model,
            &ctx.noise,
            &ctx.h,
            &cfg.quadrature,
            p.residual_margin,
        )?)
    } else {
        None
    };
    art.json(
        "poisson.json",
        json!({
            "truncation_horizon": fh.truncation_horizon,
            "n_paths": fh.n_paths,
            "n_grid": fh.grid.len(),
            "core": [fh.core_lo, fh.core_hi],
            "mu_h": fh.mu_h,
            "mu_h_stderr": fh.mu_h_stderr,
            "growth_exponent": fh.growth_exponent(),
            "warnings": fh.warnings,
            "steps": fh.steps,
            "residual": residual.as_ref().map(|r| json!({
                "fraction_within": r.fraction_within,
                "required_fraction": r.required_fraction,
                "multiple": r.multiple,
                "n_points": r.points.len(),
                "pass": r.pass,
            })),
        }),
    )?;
    art.csv("poisson.csv", |w| fh.write_csv(w))?;
    if let Some(r) = &residual {
        art.csv("poisson_residual.csv", |w| {
            writeln!(w, "x,generator,target,residual,combined_stderr,within")?;
            for q in &r.points {
                writeln!(
                    w,
                    "{:e},{:e},{:e},{:e},{:e},{}",
                    q.x, q.generator, q.target, q.residual, q.combined_stderr, q.within
                )?;
            }
            Ok(())
        })?;
    }
    let detail = format!(
        "{} grid points, truncation horizon {}, residual {}",
        fh.grid.len(),
        fh.truncation_horizon,
        residual
            .as_ref()
            .map(|r| format!("{:.3} within (pass = {})", r.fraction_within, r.pass))
            .unwrap_or_else(|| "skipped".into())
    );
    ctx.log("poisson", t0, fh.steps, detail);
    res.poisson = Some(fh);
    res.residual = residual;
    Ok(())
}

fn batch_means(ctx: &mut Ctx<'_>, res: &mut RunResults) -> Result<(VarianceEstimate, u64)> {
    if let Some(v) = &res.variance_batch_means {
        return Ok((v.clone(), 0));
    }
    let b = ctx.batch_config();
    let v = variance_batch_means(&ctx.model, &ctx.noise, &ctx.h, &b, &ctx.stream(BATCH_STREAM))?;
    res.variance_batch_means = Some(v.clone());
    Ok((v, steps_for(b.horizon, b.dt)))
}

fn run_variance(ctx: &mut Ctx<'_>, art: &mut ArtifactWriter, res: &mut RunResults) -> Result<()> {
    let t0 = Instant::now();
    let (bm, steps) = batch_means(ctx, res)?;
    let formula = match (&res.poisson, &res.invariant) {
        (Some(fh), Some(mu)) => Some(variance_formula(fh, mu, &ctx.noise, &ctx.cfg.quadrature)?),
        _ => None,
    };
    let rel = formula
        .as_ref()
        .map(|f| (f.value - bm.value).abs() / bm.value.abs().max(f64::MIN_POSITIVE));
    art.json(
        "variance.json",
        json!({
            "batch_means": bm,
            "formula": formula,
            "relative_difference": rel,
        }),
    )?;
    let detail = format!(
        "batch means {:.5} +- {:.5}; formula {}",
        bm.value,
        bm.stderr,
        formula
            .as_ref()
            .map(|f| format!(
                "{:.5} +- {:.5} (diverged = {}, relative difference {:.3})",
                f.value,
                f.stderr,
                f.diverged,
                rel.unwrap_or(f64::NAN)
            ))
            .unwrap_or_else(|| "not available for dim > 1".into())
    );
    ctx.log("variance", t0, steps, detail);
    res.variance_formula = formula;
    Ok(())
}

fn center(ctx: &Ctx<'_>, res: &RunResults) -> f64 {
    if ctx.cfg.symmetric_center() {
        0.0
    } else {
        res.mu_h.expect("invariant runs when the center is not pinned").0
    }
}

fn write_sample(art: &mut ArtifactWriter, name: &str, s: &ScaledSample) -> Result<()> {
    art.csv(name, |w| s.write_csv(w)).map(|_| ())
}

fn run_clt(ctx: &mut Ctx<'_>, art: &mut ArtifactWriter, res: &mut RunResults) -> Result<()> {
    let t0 = Instant::now();
    let (bm, mut steps) = batch_means(ctx, res)?;
    let c = center(ctx, res);
    let cfg = ctx.cfg;
    let t = cfg.sim.horizon;
    let n = cfg.sim.n_replicas;
    let sample = replicate_scaled_statistic(
        &ctx.model,
        &ctx.noise,
        &ctx.h,
        0.5,
        t,
        n,
        c,
        &ctx.replica_config(),
        &ctx.stream(CLT_STREAM),
    )?;
    let verdict = ks_gaussian_test(&sample, bm.value)?;
    art.json(
        "clt.json",
        json!({
            "verdict": verdict,
            "variance_batch_means": bm.value,
            "variance_batch_means_stderr": bm.stderr,
            "variance_formula": res.variance_formula.as_ref().map(|f| f.value),
            "center": c,
            "gamma": 0.5,
            "t": t,
            "sample_mean": stats::mean(&sample.values),
            "sample_variance": stats::variance(&sample.values),
        }),
    )?;
    write_sample(art, "clt_sample.csv", &sample)?;
    steps += n as u64 * steps_for(t, cfg.sim.dt);
    let mut detail = format!("Gaussian limit with variance {:.5} (batch means)", bm.value);
    if let Some(f) = &res.variance_formula {
        let _ = write!(detail, ", formula variance {:.5}", f.value);
    }
    let _ = write!(detail, "\n  {}", describe(&verdict));
    ctx.log("clt", t0, steps, detail);
    res.clt = Some(verdict);
    Ok(())
}

fn run_stable(ctx: &mut Ctx<'_>, art: &mut ArtifactWriter, res: &mut RunResults) -> Result<()> {
    let t0 = Instant::now();
    let c = center(ctx, res);
    let cfg = ctx.cfg;
    let t = cfg.stable_t();
    let n = cfg.sim.n_replicas;
    let sample = replicate_scaled_statistic(
        &ctx.model,
        &ctx.noise,
        &ctx.h,
        1.0 / cfg.alpha,
        t,
        n,
        c,
        &ctx.replica_config(),
        &ctx.stream(STABLE_STREAM),
    )?;
    let target = LimitTarget::Stable {
        alpha: cfg.alpha,
        scale: 1.0,
    };
    let cf = cf_distance_test(&sample, &target, &cfg.limit.xi_grid)?;
    let ks = if cfg.dim == 1 {
        Some(ks_stable_test(&sample, cfg.alpha, 1.0, &cfg.quadrature)?)
    } else {
        None
    };
    art.json(
        "stable.json",
        json!({
            "cf_distance": cf,
            "kolmogorov_smirnov": ks,
            "center": c,
            "gamma": 1.0 / cfg.alpha,
            "t": t,
        }),
    )?;
    write_sample(art, "stable_sample.csv", &sample)?;
    let mut detail = format!("stable limit, {}", describe(&cf));
    if let Some(k) = &ks {
        let _ = write!(detail, "\n  {}", describe(k));
    }
    ctx.log("stable", t0, n as u64 * steps_for(t, cfg.sim.dt), detail);
    res.stable_cf = Some(cf);
    res.stable_ks = ks;
    Ok(())
}

fn scan_csv(art: &mut ArtifactWriter, name: &str, scan: &ScanResult) -> Result<()> {
    art.csv(name, |w| {
        writeln!(w, "t,iqr")?;
        for (t, q) in scan.t_grid.iter().zip(&scan.iqrs) {
            writeln!(w, "{t:e},{q:e}")?;
        }
        Ok(())
    })
    .map(|_| ())
}

fn run_scan(ctx: &mut Ctx<'_>, art: &mut ArtifactWriter, res: &mut RunResults) -> Result<()> {
    let t0 = Instant::now();
    let c = center(ctx, res);
    let cfg = ctx.cfg;
    let s = &cfg.scan;
    let scan = scaling_exponent_scan(
        &ctx.model,
        &ctx.noise,
        &ctx.h,
        &s.t_grid,
        s.n_replicas,
        c,
        &ctx.replica_config(),
        &ctx.stream(SCAN_STREAM),
    )?;
    art.json("scan.json", json!({ "scan": scan, "center": c }))?;
    scan_csv(art, "scan.csv", &scan)?;
    let t_max = s.t_grid.last().copied().unwrap_or(0.0);
    ctx.log(
        "scan",
        t0,
        s.n_replicas as u64 * steps_for(t_max, cfg.sim.dt),
        format!("gamma_hat {:.4} +- {:.4}", scan.gamma_hat, scan.stderr),
    );
    res.scan = Some(scan);
    Ok(())
}

/// Expected behaviour of a phase-diagram cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    NormalClt,
    NoNormalClt,
    Unknown,
}

impl Regime {
    /// Bounded `h`: Gaussian for every `theta`. Lipschitz `h`: stable at
    /// `theta = 0`, Gaussian above `1 - alpha/2`, open in between.
    pub fn of(kind: TestKind, theta: f64, alpha: f64) -> Self {
        match kind {
            TestKind::Bounded => Regime::NormalClt,
            TestKind::Lipschitz if theta == 0.0 => Regime::NoNormalClt,
            TestKind::Lipschitz if theta > 1.0 - alpha / 2.0 => Regime::NormalClt,
            TestKind::Lipschitz => Regime::Unknown,
        }
    }
}

pub const EXPLORATORY: &str = "exploratory";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub h_kind: TestKind,
    pub h_name: String,
    pub theta: f64,
    pub regime: Regime,
    pub verdict: LimitVerdict,
    /// CF-distance check next to the KS verdict of a stable cell.
    pub secondary: Option<LimitVerdict>,
    pub gamma_hat: f64,
    pub gamma_stderr: f64,
    pub expected_gamma: Option<f64>,
    pub variance_batch_means: Option<f64>,
    pub t_grid: Vec<f64>,
    pub iqrs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetadata {
    pub root_seed: u64,
    pub alpha: f64,
    pub thetas: Vec<f64>,
    pub config: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagramReport {
    pub rows: Vec<PhaseRow>,
    pub metadata: PhaseMetadata,
}

/// One row per (test-function class, theta): a scaling-exponent scan and
/// the distribution test matching the expected regime. Rows of the open
/// regime are reported inconclusive and labelled exploratory whatever the
/// test says. Uses power drifts, `sin` and the identity, centered at 0 by
/// symmetry.
pub fn phase_diagram(cfg: &ExperimentConfig) -> Result<(PhaseDiagramReport, u64)> {
    cfg.validate()?;
    if cfg.dim != 1 {
        return Err(Error::config("dim", "the phase diagram runs in dimension 1"));
    }
    let pd = &cfg.phase_diagram;
    let noise = cfg.noise()?;
    let thetas = cfg.phase_thetas();
    let seed = cfg.root_seed();
    let n_rep = pd.n_replicas.unwrap_or(cfg.sim.n_replicas);
    let rc = ReplicaConfig {
        x0: vec![0.0],
        dt: cfg.sim.dt,
        scheme: cfg.sim.scheme,
    };
    let mut rows = Vec::new();
    let mut steps = 0u64;
    for (i, h) in [TestFunction::sin(), TestFunction::identity()].iter().enumerate() {
        for (j, &theta) in thetas.iter().enumerate() {
            let cell = (i * thetas.len() + j) as u64;
            let stream = |k: u64| RngStream::new(seed, PHASE_STREAM + 16 * cell + k);
            let model = DriftModel::power(theta)?;
            let regime = Regime::of(h.kind(), theta, cfg.alpha);
            let scan = scaling_exponent_scan(
                &model,
                &noise,
                h,
                &pd.scan_t_grid,
                pd.scan_replicas,
                0.0,
                &rc,
                &stream(0),
            )
            .map_err(|e| e.context(format!("scan of cell ({}, theta {theta})", h.name())))?;
            let t_max = pd.scan_t_grid.last().copied().unwrap_or(0.0);
            steps += pd.scan_replicas as u64 * steps_for(t_max, cfg.sim.dt);

            let (verdict, secondary, variance) = match regime {
                Regime::NormalClt | Regime::Unknown => {
                    let mut b = BatchMeansConfig::new(1, pd.variance_horizon, pd.variance_batches);
                    b.dt = cfg.sim.dt;
                    b.scheme = cfg.sim.scheme;
                    b.burn_in = cfg.burn_in_for(pd.variance_horizon);
                    let v = variance_batch_means(&model, &noise, h, &b, &stream(1))?;
                    steps += steps_for(b.horizon, b.dt);
                    let sample = replicate_scaled_statistic(
                        &model, &noise, h, 0.5, pd.gaussian_t, n_rep, 0.0, &rc, &stream(2),
                    )?;
                    steps += n_rep as u64 * steps_for(pd.gaussian_t, cfg.sim.dt);
                    let mut verdict = ks_gaussian_test(&sample, v.value)?;
                    if regime == Regime::Unknown {
                        verdict.decision = Decision::Inconclusive;
                        verdict.label = Some(EXPLORATORY.into());
                    }
                    (verdict, None, Some(v.value))
                }
                Regime::NoNormalClt => {
                    let sample = replicate_scaled_statistic(
                        &model,
                        &noise,
                        h,
                        1.0 / cfg.alpha,
                        pd.stable_t,
                        n_rep,
                        0.0,
                        &rc,
                        &stream(3),
                    )?;
                    steps += n_rep as u64 * steps_for(pd.stable_t, cfg.sim.dt);
                    let ks = ks_stable_test(&sample, cfg.alpha, 1.0, &cfg.quadrature)?;
                    let target = LimitTarget::Stable {
                        alpha: cfg.alpha,
                        scale: 1.0,
                    };
                    let cf = cf_distance_test(&sample, &target, &cfg.limit.xi_grid)?;
                    (ks, Some(cf), None)
                }
            };
            rows.push(PhaseRow {
                h_kind: h.kind(),
                h_name: h.name().to_string(),
                theta,
                regime,
                verdict,
                secondary,
                gamma_hat: scan.gamma_hat,
                gamma_stderr: scan.stderr,
                expected_gamma: match regime {
                    Regime::NormalClt => Some(0.5),
                    Regime::NoNormalClt => Some(1.0 / cfg.alpha),
                    Regime::Unknown => None,
                },
                variance_batch_means: variance,
                t_grid: scan.t_grid,
                iqrs: scan.iqrs,
            });
        }
    }
    Ok((
        PhaseDiagramReport {
            rows,
            metadata: PhaseMetadata {
                root_seed: seed,
                alpha: cfg.alpha,
                thetas,
                config: cfg.to_json_value(),
            },
        },
        steps,
    ))
}

fn run_phase(ctx: &mut Ctx<'_>, art: &mut ArtifactWriter, res: &mut RunResults) -> Result<()> {
    let t0 = Instant::now();
    let (report, steps) = phase_diagram(ctx.cfg)?;
    art.json("phase_diagram.json", serde_json::to_value(&report)?)?;
    art.csv("phase_diagram.csv", |w| {
        writeln!(
            w,
            "h_kind,theta,regime,test,statistic,threshold,decision,label,gamma_hat,gamma_stderr"
        )?;
        for r in &report.rows {
            writeln!(
                w,
                "{:?},{},{:?},{:?},{:e},{:e},{:?},{},{:e},{:e}",
                r.h_kind,
                r.theta,
                r.regime,
                r.verdict.test,
                r.verdict.statistic,
                r.verdict.p_value_or_threshold,
                r.verdict.decision,
                r.verdict.label.as_deref().unwrap_or(""),
                r.gamma_hat,
                r.gamma_stderr
            )?;
        }
        Ok(())
    })?;
    let mut detail = String::from("cells:");
    for r in &report.rows {
        let _ = write!(
            detail,
            "\n  {:<9} theta {:<6.4} {:<14} gamma_hat {:.3} +- {:.3}  {}",
            r.h_name,
            r.theta,
            format!("{:?}", r.regime),
            r.gamma_hat,
            r.gamma_stderr,
            describe(&r.verdict)
        );
    }
    ctx.log("phase-diagram", t0, steps, detail);
    res.phase_diagram = Some(report);
    Ok(())
}

/// Draws `noise_samples.n` increments over `noise_samples.dt` and compares
/// their characteristic function with `exp(-dt |xi|^alpha)`.
pub fn run_sample_noise(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut art = ArtifactWriter::open(&out_dir(cfg, opts), cfg, opts.force)?;
    let noise = cfg.noise()?;
    let s = &cfg.noise_samples;
    let sampler = noise.increment_sampler(s.dt)?;
    let mut rng = RngStream::new(cfg.root_seed(), NOISE_STREAM);
    let d = cfg.dim;
    let mut draws = vec![0.0; s.n * d];
    for chunk in draws.chunks_mut(d) {
        sampler.fill(&mut rng, chunk);
    }
    let first: Vec<f64> = draws.iter().step_by(d).copied().collect();
    let (alpha, dt) = (cfg.alpha, s.dt);
    let exact = move |xi: f64| (-dt * xi.abs().powf(alpha)).exp();
    let table = cf_table(&first, &cfg.limit.xi_grid, exact);
    let max_err = cfg
        .limit
        .xi_grid
        .iter()
        .map(|&xi| (stats::empirical_cf(&first, xi).0 - exact(xi)).abs())
        .fold(0.0, f64::max);
    art.json(
        "noise.json",
        json!({
            "n": s.n,
            "dt": dt,
            "cf_first_coordinate": table,
            "max_cf_error": max_err,
            "quantiles_first_coordinate": quantile_table(&first),
        }),
    )?;
    art.csv("noise.csv", |w| {
        let header: Vec<String> = (1..=d).map(|i| format!("z{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in draws.chunks(d) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "[sample-noise] {} draws of Z_{dt}, max CF error {max_err:.5}\n  draws: {}  wall-clock: {:.2} s",
        s.n,
        s.n,
        started.elapsed().as_secs_f64()
    );
    let ctx_summary = summary.clone();
    let wall_clock = started.elapsed();
    let out = art.dir().to_path_buf();
    let hash = art.hash().to_string();
    let files = art.finish(&ctx_summary)?;
    Ok(RunReport {
        out_dir: out,
        config_hash: hash,
        files,
        summary,
        steps: 0,
        wall_clock,
        results: RunResults::default(),
    })
}

/// One path over `sim.horizon`, recorded every `sim.record_stride` steps.
pub fn run_simulate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut art = ArtifactWriter::open(&out_dir(cfg, opts), cfg, opts.force)?;
    let model = cfg.drift_model()?;
    let noise = cfg.noise()?;
    let h = cfg.test_function()?;
    let sim = SimConfig {
        x0: cfg.x0(),
        dt: cfg.sim.dt,
        horizon: cfg.sim.horizon,
        burn_in: 0.0,
        scheme: cfg.sim.scheme,
    };
    let stride = cfg.sim.record_stride as u64;
    let mut rng = RngStream::new(cfg.root_seed(), PATH_STREAM);
    let mut rows: Vec<(f64, Vec<f64>)> = vec![(0.0, sim.x0.clone())];
    let (mut k, mut sum_h, mut max_abs) = (0u64, 0.0, 0.0f64);
    let last = crate::sde::integrate_path(&model, &noise, &sim, &mut rng, |t, x| {
        k += 1;
        sum_h += h.eval(x);
        max_abs = max_abs.max(x.iter().map(|v| v.abs()).fold(0.0, f64::max));
        if k % stride == 0 {
            rows.push((t, x.to_vec()));
        }
    })?;
    let n_steps = sim.n_steps();
    art.json(
        "path.json",
        json!({
            "n_steps": n_steps,
            "final_state": last,
            "time_average_h": sum_h / n_steps as f64,
            "max_abs_coordinate": max_abs,
            "record_stride": stride,
        }),
    )?;
    art.csv("path.csv", |w| {
        let header: Vec<String> = (1..=cfg.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "t,{}", header.join(","))?;
        for (t, x) in &rows {
            let cells: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{t:e},{}", cells.join(","))?;
        }
        Ok(())
    })?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "[simulate] one path to t = {}, time average of h {:.5}\n  steps: {n_steps}  wall-clock: {:.2} s",
        cfg.sim.horizon,
        sum_h / n_steps as f64,
        started.elapsed().as_secs_f64()
    );
    let wall_clock = started.elapsed();
    let out = art.dir().to_path_buf();
    let hash = art.hash().to_string();
    let files = art.finish(&summary)?;
    Ok(RunReport {
        out_dir: out,
        config_hash: hash,
        files,
        summary,
        steps: n_steps,
        wall_clock,
        results: RunResults::default(),
    })
}
