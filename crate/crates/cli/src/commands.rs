//! Subcommand implementations. Each reads and writes files under the
//! configured output directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use lagnet::aclime::{aclime_with_workspace, clime_with_workspace, support, PrecisionEstimate, SolveReport, Workspace};
use lagnet::container::{format_key_values, parse_key_values, read_matrix, sparse_triplets, write_matrix};
use lagnet::dataset::{lag_expand, sample_covariance, tau, zscore};
use lagnet::graph_velocity::{
    estimate_velocities, extract_edges, quiver_svg, score, velocity_csv, EdgeSet, ErrorSummary, Scored,
    VelocityReport,
};
use lagnet::pde_sim::{make_velocity_field, simulate_subsampled, Grid, RawRuns, Scenario, VelocityField};
use lagnet::synthetic::{sample_gaussian, stability_precision, STABILITY_GRAPH};
use lagnet::Error;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::config::{Method, PipelineConfig};

pub const RUNS_FILE: &str = "runs.gmat";
pub const MANIFEST_FILE: &str = "runs.manifest";
pub const OMEGA_FILE: &str = "omega.gmat";
pub const TRIPLETS_FILE: &str = "omega_triplets.csv";
pub const META_FILE: &str = "learn_meta.csv";
pub const ZSCORE_FILE: &str = "zscore.csv";
pub const STAGE1_TRACE_FILE: &str = "stage1_trace.csv";
pub const STAGE2_TRACE_FILE: &str = "stage2_trace.csv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const VELOCITY_FILE: &str = "velocity.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const QUIVER_FILE: &str = "quiver.svg";
pub const STABILITY_FILE: &str = "stability.csv";

/// Residual level both stages must reach in the stability check.
pub const STABILITY_RESIDUAL: f64 = 1e-3;

/// Everything that ends a command early.
#[derive(Debug)]
pub enum Failure {
    Lagnet(Error),
    /// Raised only in strict mode, after all outputs are written.
    NotConverged { stage: &'static str, columns: usize },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lagnet(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lagnet(Error::Io(e))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Lagnet(e) => write!(f, "{e}"),
            Failure::NotConverged { stage, columns } => {
                write!(f, "{stage}: {columns} column(s) did not converge within max_iter")
            }
        }
    }
}

impl std::error::Error for Failure {}

impl Failure {
    /// 2 configuration, 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::NotConverged { .. } => 3,
            Failure::Lagnet(e) => match e {
                Error::InvalidGrid(_)
                | Error::UnknownScenario(_)
                | Error::InvalidConfig(_)
                | Error::StrideTooLarge { .. }
                | Error::RunTooShort { .. }
                | Error::DimensionMismatch(_)
                | Error::DeltaBelowTheory(_) => 2,
                Error::Unstable { .. }
                | Error::Infeasible
                | Error::Unbounded
                | Error::NotStandardized { .. }
                | Error::TooFewSamples(_) => 3,
                Error::Format(_) | Error::Io(_) => 4,
            },
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

fn out_path(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn write_text(path: &Path, text: &str) -> CmdResult<()> {
    fs::write(path, text)?;
    Ok(())
}

/// Description of a runs container, stored next to it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunsManifest {
    pub scenario: Scenario,
    pub width: usize,
    pub height: usize,
    pub kappa: f64,
    pub dt: f64,
    pub run_steps: usize,
    pub stride: usize,
    pub runs: usize,
    pub rows_per_run: usize,
    pub seed: u64,
}

impl RunsManifest {
    pub fn to_text(&self) -> String {
        let pairs: Vec<(String, String)> = [
            ("scenario", self.scenario.name()),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("kappa", format!("{:?}", self.kappa)),
            ("dt", format!("{:?}", self.dt)),
            ("run_steps", self.run_steps.to_string()),
            ("stride", self.stride.to_string()),
            ("runs", self.runs.to_string()),
            ("rows_per_run", self.rows_per_run.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        format_key_values(&pairs)
    }

    pub fn from_text(text: &str) -> lagnet::Result<Self> {
        let pairs = parse_key_values(text)?;
        let get = |key: &str| {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("manifest lacks '{key}'")))
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> lagnet::Result<T> {
            v.parse().map_err(|_| Error::Format(format!("manifest: bad {key} '{v}'")))
        }
        Ok(RunsManifest {
            scenario: get("scenario")?.parse()?,
            width: num("width", get("width")?)?,
            height: num("height", get("height")?)?,
            kappa: num("kappa", get("kappa")?)?,
            dt: num("dt", get("dt")?)?,
            run_steps: num("run_steps", get("run_steps")?)?,
            stride: num("stride", get("stride")?)?,
            runs: num("runs", get("runs")?)?,
            rows_per_run: num("rows_per_run", get("rows_per_run")?)?,
            seed: num("seed", get("seed")?)?,
        })
    }

    pub fn read(path: &Path) -> lagnet::Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn grid(&self) -> lagnet::Result<Grid> {
        Grid::new(self.width, self.height)
    }

    /// True velocities in cells per recorded step.
    pub fn truth(&self) -> lagnet::Result<VelocityField> {
        let field = make_velocity_field(self.scenario, self.grid()?);
        Ok(field.scaled(self.dt * self.stride as f64))
    }
}

/// Manifest describing what `simulate` would produce under `cfg`.
pub fn manifest_for(cfg: &PipelineConfig) -> lagnet::Result<RunsManifest> {
    let sim = cfg.sim_config()?;
    Ok(RunsManifest {
        scenario: sim.scenario,
        width: cfg.width,
        height: cfg.height,
        kappa: sim.kappa,
        dt: sim.dt,
        run_steps: sim.run_steps,
        stride: cfg.stride(),
        runs: cfg.width * cfg.height,
        rows_per_run: sim.run_steps,
        seed: cfg.seed,
    })
}

/// The stored manifest if present, otherwise the one implied by `cfg`.
fn load_manifest(cfg: &PipelineConfig) -> lagnet::Result<RunsManifest> {
    let path = out_path(cfg, MANIFEST_FILE);
    if path.exists() {
        RunsManifest::read(&path)
    } else {
        log::warn!("{} not found, describing the runs from the configuration", path.display());
        manifest_for(cfg)
    }
}

/// All runs stacked vertically.
pub fn stack_runs(runs: &RawRuns) -> lagnet::Result<Array2<f64>> {
    let views: Vec<ArrayView2<f64>> = runs.runs.iter().map(|r| r.view()).collect();
    if views.is_empty() {
        return Ok(Array2::zeros((0, 0)));
    }
    concatenate(Axis(0), &views).map_err(|e| Error::DimensionMismatch(e.to_string()))
}

pub fn split_runs(stacked: &Array2<f64>, rows_per_run: usize) -> lagnet::Result<RawRuns> {
    if rows_per_run == 0 || stacked.nrows() % rows_per_run != 0 {
        return Err(Error::Format(format!(
            "{} rows do not split into runs of {rows_per_run}",
            stacked.nrows()
        )));
    }
    let runs = (0..stacked.nrows() / rows_per_run)
        .map(|r| stacked.slice(s![r * rows_per_run..(r + 1) * rows_per_run, ..]).to_owned())
        .collect();
    Ok(RawRuns { runs })
}

/// Simulates every impulse run and writes the runs container and manifest.
pub fn simulate(cfg: &PipelineConfig) -> CmdResult<RunsManifest> {
    let manifest = manifest_for(cfg)?;
    let sim = cfg.sim_config()?;
    let runs = simulate_subsampled(&sim, manifest.grid()?, manifest.stride)?;
    fs::create_dir_all(&cfg.out_dir)?;
    write_matrix(&out_path(cfg, RUNS_FILE), stack_runs(&runs)?.view())?;
    write_text(&out_path(cfg, MANIFEST_FILE), &manifest.to_text())?;
    log::info!(
        "simulated {} runs of {} rows ({}, dt = {:.6}, stride {})",
        manifest.runs,
        manifest.rows_per_run,
        manifest.scenario,
        manifest.dt,
        manifest.stride
    );
    Ok(manifest)
}

/// Result of `learn`.
#[derive(Debug, Clone)]
pub struct LearnOutput {
    pub estimate: PrecisionEstimate,
    pub tau: f64,
    pub n: usize,
    pub p: usize,
}

/// One sidecar row per stage and column block.
/// `lambda` is the CLIME threshold (`NA` for ACLIME, whose thresholds vary by column).
pub fn metadata_csv(est: &PrecisionEstimate, tau: f64, delta: f64, lambda: Option<f64>) -> String {
    let lambda = lambda.map_or("NA".to_string(), |l| format!("{l:?}"));
    let mut out = String::from("stage,block,start,columns,rho,eta,tau,delta,lambda,max_iterations,converged\n");
    let mut emit = |stage: usize, r: &SolveReport| {
        let p = r.iterations.len();
        for (b, start) in (0..p).step_by(r.block_size.max(1)).enumerate() {
            let end = (start + r.block_size).min(p);
            let iters = r.iterations[start..end].iter().copied().max().unwrap_or(0);
            let converged = r.converged[start..end].iter().all(|c| *c);
            out.push_str(&format!(
                "{stage},{b},{start},{},{:?},{:?},{:?},{:?},{lambda},{iters},{converged}\n",
                end - start,
                r.rho,
                r.eta,
                tau,
                delta
            ));
        }
    };
    if let Some(s1) = &est.stage1 {
        emit(1, s1);
    }
    emit(2, &est.stage2);
    out
}

/// Lag-expands the stored runs, z-scores, estimates `Ω̂` and writes it with
/// its metadata. Outputs are written even when a stage fails to converge.
pub fn learn(cfg: &PipelineConfig) -> CmdResult<LearnOutput> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let stacked = read_matrix(&out_path(cfg, RUNS_FILE))?;
    if stacked.ncols() != manifest.width * manifest.height {
        return Err(Error::DimensionMismatch(format!(
            "runs have {} locations, manifest grid {}x{}",
            stacked.ncols(),
            manifest.width,
            manifest.height
        ))
        .into());
    }
    let runs = split_runs(&stacked, manifest.rows_per_run)?;
    let design = lag_expand(&runs, cfg.lags)?;
    let (xs, info) = zscore(&design)?;
    if info.constant_count() > 0 {
        log::warn!("{} constant lagged variables", info.constant_count());
    }
    let cov = sample_covariance(&xs)?;
    let (n, p) = (xs.n(), xs.p());
    let tau_n = tau(cfg.delta, p, n);
    log::info!("learning {} on n = {n}, p = {p}, tau = {tau_n:.6}", cfg.method.name());
    let opts = cfg.estimator_options();
    let ws = Workspace::new(&cov)?;
    let (estimate, lambda) = match cfg.method {
        Method::Aclime => (aclime_with_workspace(&ws, &cov.c.diag().to_owned(), cfg.delta, &opts)?, None),
        Method::Clime => {
            let lambda = cfg.lambda.unwrap_or(tau_n);
            (clime_with_workspace(&ws, lambda, &opts)?, Some(lambda))
        }
    };

    fs::create_dir_all(&cfg.out_dir)?;
    write_matrix(&out_path(cfg, OMEGA_FILE), estimate.omega_hat.view())?;
    let cutoff = cfg.zero_tol * max_abs(estimate.omega_hat.view());
    write_text(&out_path(cfg, TRIPLETS_FILE), &sparse_triplets(estimate.omega_hat.view(), cutoff))?;
    write_text(&out_path(cfg, ZSCORE_FILE), &info.to_csv())?;
    write_text(&out_path(cfg, META_FILE), &metadata_csv(&estimate, tau_n, cfg.delta, lambda))?;
    let stage1_trace = out_path(cfg, STAGE1_TRACE_FILE);
    match &estimate.stage1 {
        Some(s1) => write_text(&stage1_trace, &s1.combined_trace().to_csv())?,
        None if stage1_trace.exists() => fs::remove_file(&stage1_trace)?,
        None => {}
    }
    write_text(&out_path(cfg, STAGE2_TRACE_FILE), &estimate.stage2.combined_trace().to_csv())?;

    let reports = estimate.stage1.iter().map(|r| ("stage 1", r)).chain([("stage 2", &estimate.stage2)]);
    for (stage, r) in reports {
        if r.unconverged() > 0 {
            log::warn!(
                "{stage}: {} of {} columns stopped at max_iter = {} (last iterate kept)",
                r.unconverged(),
                r.converged.len(),
                r.max_iterations()
            );
            if cfg.strict {
                return Err(Failure::NotConverged { stage, columns: r.unconverged() });
            }
        }
    }
    Ok(LearnOutput { estimate, tau: tau_n, n, p })
}

fn max_abs(m: ArrayView2<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Result of `evaluate`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub scenario: String,
    pub method: String,
    pub edges: EdgeSet,
    pub report: VelocityReport,
    pub scored: Scored,
}

impl Evaluation {
    pub fn summary(&self) -> ErrorSummary {
        self.scored.summary
    }

    pub fn summary_csv(&self) -> String {
        format!("{}\n{}\n", ErrorSummary::CSV_HEADER, self.scored.summary.csv_row(&self.scenario, &self.method))
    }
}

/// Scores an in-memory `Ω̂` against a truth field.
pub fn evaluate_matrix(
    omega: ArrayView2<f64>,
    grid: Grid,
    truth: &VelocityField,
    cfg: &PipelineConfig,
    scenario: &str,
) -> lagnet::Result<Evaluation> {
    let q = grid.len();
    if omega.nrows() != q * cfg.lags {
        return Err(Error::DimensionMismatch(format!(
            "omega is {}x{}, grid {}x{} with {} lags needs {}",
            omega.nrows(),
            omega.ncols(),
            grid.width,
            grid.height,
            cfg.lags,
            q * cfg.lags
        )));
    }
    let edges = extract_edges(omega, q, cfg.lags, cfg.zero_tol * max_abs(omega))?;
    let report = estimate_velocities(&edges, grid, cfg.mode, cfg.min_strength)?;
    let scored = score(&report, truth)?;
    Ok(Evaluation { scenario: scenario.to_string(), method: cfg.method.name().to_string(), edges, report, scored })
}

/// Reads `Ω̂`, recovers velocities and writes the edge list, velocity report,
/// summary row and quiver plot.
pub fn evaluate(cfg: &PipelineConfig) -> CmdResult<Evaluation> {
    if cfg.lags == 0 {
        return Err(Error::InvalidConfig("lags must be >= 1".into()).into());
    }
    let manifest = load_manifest(cfg)?;
    let omega = read_matrix(&out_path(cfg, OMEGA_FILE))?;
    let grid = manifest.grid()?;
    let truth = manifest.truth()?;
    let eval = evaluate_matrix(omega.view(), grid, &truth, cfg, &manifest.scenario.name())?;
    fs::create_dir_all(&cfg.out_dir)?;
    write_text(&out_path(cfg, EDGES_FILE), &eval.edges.to_tsv())?;
    write_text(&out_path(cfg, VELOCITY_FILE), &velocity_csv(&eval.report, &truth, &eval.scored))?;
    write_text(&out_path(cfg, SUMMARY_FILE), &eval.summary_csv())?;
    let title = format!("{} / {}", eval.scenario, eval.method);
    write_text(&out_path(cfg, QUIVER_FILE), &quiver_svg(&eval.report, &truth, &eval.scored, &title))?;
    log::info!(
        "{} directed / {} undirected edges; {}",
        eval.edges.directed_count(),
        eval.edges.undirected_count(),
        eval.scored.summary.csv_row(&eval.scenario, &eval.method)
    );
    Ok(eval)
}

/// `simulate`, `learn` and `evaluate` in sequence.
pub fn pipeline(cfg: &PipelineConfig) -> CmdResult<Evaluation> {
    cfg.validate()?;
    simulate(cfg)?;
    learn(cfg)?;
    evaluate(cfg)
}

/// One `ρ` of the stability sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub rho: f64,
    /// Percentage of off-diagonal pairs classified correctly.
    pub accuracy: f64,
    pub exact_support: bool,
    /// First iteration from which both residuals stay below the threshold.
    pub stage1_settled: Option<usize>,
    pub stage2_settled: Option<usize>,
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    pub converged: bool,
}

impl StabilityRow {
    pub const CSV_HEADER: &'static str =
        "rho,accuracy,exact_support,stage1_settled,stage2_settled,stage1_iterations,stage2_iterations,converged";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("NA".to_string(), |i| i.to_string());
        format!(
            "{:?},{:.2},{},{},{},{},{},{}",
            self.rho,
            self.accuracy,
            self.exact_support,
            opt(self.stage1_settled),
            opt(self.stage2_settled),
            self.stage1_iterations,
            self.stage2_iterations,
            self.converged
        )
    }
}

/// ACLIME on Gaussian samples from the 10-variable tree, once per `ρ`.
/// Writes a summary CSV and one residual trace per stage and `ρ`.
pub fn stability_check(cfg: &PipelineConfig) -> CmdResult<Vec<StabilityRow>> {
    cfg.validate()?;
    let truth = stability_precision();
    let p = truth.nrows();
    let mut true_edges: Vec<(usize, usize)> = STABILITY_GRAPH.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
    true_edges.sort_unstable();
    let x = sample_gaussian(&truth, cfg.samples, cfg.seed)?;
    let (xs, _) = zscore(&lagnet::dataset::DesignMatrix::new(x, p, 1)?)?;
    let cov = sample_covariance(&xs)?;
    let ws = Workspace::new(&cov)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut rows = Vec::new();
    for &rho in &cfg.rhos {
        let mut opts = cfg.estimator_options();
        opts.stage1.rho = rho;
        opts.stage2.rho = rho;
        let est = aclime_with_workspace(&ws, &cov.c.diag().to_owned(), cfg.delta, &opts)?;
        let found = support(est.omega_hat.view(), cfg.zero_tol);
        let pairs = p * (p - 1) / 2;
        let wrong = true_edges.iter().filter(|e| !found.contains(e)).count()
            + found.iter().filter(|e| !true_edges.contains(e)).count();
        let s1 = est.stage1.as_ref().expect("ACLIME runs stage 1");
        let (t1, t2) = (s1.combined_trace(), est.stage2.combined_trace());
        write_text(&out_path(cfg, &format!("stability_rho{rho}_stage1.csv")), &t1.to_csv())?;
        write_text(&out_path(cfg, &format!("stability_rho{rho}_stage2.csv")), &t2.to_csv())?;
        rows.push(StabilityRow {
            rho,
            accuracy: 100.0 * (pairs - wrong) as f64 / pairs as f64,
            exact_support: wrong == 0,
            stage1_settled: t1.settled_below(STABILITY_RESIDUAL),
            stage2_settled: t2.settled_below(STABILITY_RESIDUAL),
            stage1_iterations: s1.max_iterations(),
            stage2_iterations: est.stage2.max_iterations(),
            converged: est.all_converged(),
        });
    }
    let mut csv = format!("{}\n", StabilityRow::CSV_HEADER);
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&out_path(cfg, STABILITY_FILE), &csv)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let cfg = PipelineConfig { width: 6, height: 5, stride: Some(3), ..Default::default() };
        let m = manifest_for(&cfg).unwrap();
        assert_eq!(m.scenario, Scenario::FastRing { stride: 3 });
        assert_eq!(RunsManifest::from_text(&m.to_text()).unwrap(), m);
        assert!(RunsManifest::from_text("width=3\n").is_err());
    }

    #[test]
    fn runs_stack_and_split() {
        let runs = RawRuns { runs: vec![Array2::from_elem((3, 2), 1.0), Array2::from_elem((3, 2), 2.0)] };
        let stacked = stack_runs(&runs).unwrap();
        assert_eq!(stacked.dim(), (6, 2));
        assert_eq!(split_runs(&stacked, 3).unwrap(), runs);
        assert!(split_runs(&stacked, 4).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::from(Error::InvalidGrid("x".into())).exit_code(), 2);
        assert_eq!(Failure::from(Error::Unstable { dt: 1.0, bound: 2.0, max_dt: 0.5 }).exit_code(), 3);
        assert_eq!(Failure::NotConverged { stage: "stage 2", columns: 1 }.exit_code(), 3);
        assert_eq!(Failure::from(Error::Format("x".into())).exit_code(), 4);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(Failure::from(io).exit_code(), 4);
    }
}
