use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stablelab::config::{Analysis, ExperimentConfig};
use stablelab::harness::{self, RunOptions, RunReport};

#[derive(Parser)]
#[command(name = "stablelab", version, about = "Limit-theorem experiments for SDEs driven by alpha-stable noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; falls back to STABLELAB_THREADS, then to all cores.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Overwrite artifacts written under a different config hash.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Draw noise increments and compare their characteristic function.
    SampleNoise(Common),
    /// Integrate and record one path.
    Simulate(Common),
    /// Sample the invariant law.
    Invariant(Common),
    /// Solve the Poisson equation on a grid (runs `invariant` first).
    Poisson(Common),
    /// Batch-means and Poisson-formula asymptotic variance.
    Variance(Common),
    /// Gaussian and stable limit tests.
    LimitTest(Common),
    /// Scaling-exponent scan.
    Scan(Common),
    /// All (test-function class, theta) cells.
    PhaseDiagram(Common),
    /// Every analysis listed under `analysis.which`.
    Run(Common),
}

enum Task {
    Analyses(Vec<Analysis>),
    Configured,
    SampleNoise,
    Simulate,
}

fn execute(cmd: Command) -> stablelab::Result<RunReport> {
    let (common, task) = match cmd {
        Command::SampleNoise(c) => (c, Task::SampleNoise),
        Command::Simulate(c) => (c, Task::Simulate),
        Command::Invariant(c) => (c, Task::Analyses(vec![Analysis::Invariant])),
        Command::Poisson(c) => (c, Task::Analyses(vec![Analysis::Poisson])),
        Command::Variance(c) => (c, Task::Analyses(vec![Analysis::Variance])),
        Command::LimitTest(c) => (c, Task::Analyses(vec![Analysis::Clt, Analysis::Stable])),
        Command::Scan(c) => (c, Task::Analyses(vec![Analysis::Scan])),
        Command::PhaseDiagram(c) => (c, Task::Analyses(vec![Analysis::PhaseDiagram])),
        Command::Run(c) => (c, Task::Configured),
    };
    let cfg = ExperimentConfig::load(&common.config)?;
    let opts = RunOptions {
        out_dir: common.out,
        force: common.force,
        threads: common.threads,
    };
    match task {
        Task::Analyses(which) => harness::run_analyses(&cfg, &which, &opts),
        Task::Configured => harness::run_analyses(&cfg, &cfg.analysis.which, &opts),
        Task::SampleNoise => harness::run_sample_noise(&cfg, &opts),
        Task::Simulate => harness::run_simulate(&cfg, &opts),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(report) => {
            println!("config_hash: {}", report.config_hash);
            print!("{}", report.summary);
            println!("artifacts: {}", report.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
