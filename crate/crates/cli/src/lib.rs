//! Command-line driver: argument parsing, configuration and the subcommands.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{CmdResult, Failure};
use config::{PipelineConfig, DEFAULT_OUT, OUT_ENV};

#[derive(Debug, Parser)]
#[command(name = "lagnet", version, about = "Learn lagged dependency graphs from advection-diffusion simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate impulse runs and write the runs container.
    Simulate,
    /// Estimate the precision matrix from stored runs.
    Learn,
    /// Recover velocities from a stored estimate and score them.
    Evaluate,
    /// simulate, learn and evaluate in one go.
    Pipeline,
    /// ACLIME on a 10-variable Gaussian tree across a sweep of rho.
    StabilityCheck,
}

/// Flags override the configuration file; every file key has one.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $LAGNET_OUT, else lagnet-out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub workers: Option<String>,
    /// circular, ring, cross-current or fast-ring[:stride].
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    /// Side length, or WIDTHxHEIGHT.
    #[arg(long, global = true)]
    pub grid: Option<String>,
    #[arg(long, global = true)]
    pub kappa: Option<String>,
    /// Time step, or "auto".
    #[arg(long, global = true)]
    pub dt: Option<String>,
    /// Recorded rows per impulse run.
    #[arg(long = "steps", alias = "run-steps", global = true)]
    pub run_steps: Option<String>,
    /// Keep every stride-th step; a ring with stride > 1 is the fast ring.
    #[arg(long, global = true)]
    pub stride: Option<String>,
    /// Number of lags T.
    #[arg(long, global = true)]
    pub lags: Option<String>,
    #[arg(long, global = true)]
    pub delta: Option<String>,
    /// Sets rho for both stages.
    #[arg(long, global = true)]
    pub rho: Option<String>,
    #[arg(long, global = true)]
    pub rho1: Option<String>,
    #[arg(long, global = true)]
    pub rho2: Option<String>,
    /// Stage-1 proximal weight, or "auto".
    #[arg(long, global = true)]
    pub eta1: Option<String>,
    /// Stage-2 proximal weight, or "auto".
    #[arg(long, global = true)]
    pub eta2: Option<String>,
    #[arg(long, global = true)]
    pub tol_abs: Option<String>,
    #[arg(long, global = true)]
    pub tol_rel: Option<String>,
    #[arg(long, global = true)]
    pub max_iter: Option<String>,
    /// Columns per block.
    #[arg(long, global = true)]
    pub block: Option<String>,
    /// aclime or clime.
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// CLIME threshold, or "auto" for tau_n.
    #[arg(long, global = true)]
    pub lambda: Option<String>,
    /// Zero threshold relative to max |omega|.
    #[arg(long, global = true)]
    pub zero_tol: Option<String>,
    #[arg(long, global = true)]
    pub min_strength: Option<String>,
    /// both or outgoing.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Samples for stability-check.
    #[arg(long, global = true)]
    pub samples: Option<String>,
    /// Comma-separated rho values for stability-check.
    #[arg(long, global = true)]
    pub rhos: Option<String>,
    /// Exit with status 3 when a stage does not converge.
    #[arg(long, global = true)]
    pub strict: bool,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let fields: [(&'static str, &Option<String>); 26] = [
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("scenario", &self.scenario),
            ("grid", &self.grid),
            ("kappa", &self.kappa),
            ("dt", &self.dt),
            ("run_steps", &self.run_steps),
            ("stride", &self.stride),
            ("lags", &self.lags),
            ("delta", &self.delta),
            ("rho", &self.rho),
            ("rho1", &self.rho1),
            ("rho2", &self.rho2),
            ("eta1", &self.eta1),
            ("eta2", &self.eta2),
            ("tol_abs", &self.tol_abs),
            ("tol_rel", &self.tol_rel),
            ("max_iter", &self.max_iter),
            ("block", &self.block),
            ("method", &self.method),
            ("lambda", &self.lambda),
            ("zero_tol", &self.zero_tol),
            ("min_strength", &self.min_strength),
            ("mode", &self.mode),
            ("samples", &self.samples),
            ("rhos", &self.rhos),
        ];
        fields.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }

    /// Defaults (output directory from the environment), then the config
    /// file, then flags.
    pub fn resolve(&self) -> lagnet::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        cfg.out_dir = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from);
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.pairs() {
            cfg.set(k, v)?;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if self.strict {
            cfg.strict = true;
        }
        Ok(cfg)
    }
}

/// Runs `f` on a pool with `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> CmdResult<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::Lagnet(lagnet::Error::InvalidConfig(format!("thread pool: {e}"))))?;
    Ok(pool.install(f))
}

pub fn run_command(command: Command, cfg: &PipelineConfig) -> CmdResult<()> {
    with_workers(cfg.workers, || -> CmdResult<()> {
        match command {
            Command::Simulate => {
                let m = commands::simulate(cfg)?;
                println!("wrote {} runs to {}", m.runs, cfg.out_dir.join(commands::RUNS_FILE).display());
            }
            Command::Learn => {
                let out = commands::learn(cfg)?;
                println!(
                    "n = {}, p = {}, tau = {:.6}, converged = {}",
                    out.n,
                    out.p,
                    out.tau,
                    out.estimate.all_converged()
                );
            }
            Command::Evaluate | Command::Pipeline => {
                let eval = if command == Command::Pipeline { commands::pipeline(cfg)? } else { commands::evaluate(cfg)? };
                print!("{}", eval.summary_csv());
            }
            Command::StabilityCheck => {
                let rows = commands::stability_check(cfg)?;
                println!("{}", commands::StabilityRow::CSV_HEADER);
                for r in rows {
                    println!("{}", r.csv_row());
                }
            }
        }
        Ok(())
    })?
}

/// Resolves the configuration and runs the command. Returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let outcome = cli.overrides.resolve().map_err(Failure::from).and_then(|cfg| run_command(cli.command, &cfg));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
