//! Two-stage adaptive constrained ℓ1 precision estimation (ACLIME) and the
//! fixed-threshold CLIME baseline, solved column-block-wise by inexact ADMM.
//!
//! Pipeline: `Ĉ = C + I/n` → stage 1 (diagonal estimates) → diagonal
//! correction → stage 2 with per-column thresholds `λ_j = τ_n sqrt(ω̆_jj)` →
//! min-magnitude symmetrization.

pub mod ops;
mod solver;

use ndarray::{Array1, Array2, ArrayView2};

pub use solver::BlockSolution;
use ops::LowRank;
use solver::{solve_all, Stage};

use crate::admm::{lambda_max, AdmmParams, ResidualTrace, POWER_ITERATIONS, POWER_TOL};
use crate::dataset::{sample_covariance, tau_checked, CovarianceView, DesignMatrix};
use crate::error::{Error, Result};

/// Tolerance on `c_jj = 1` accepted by the solvers.
pub const STANDARDIZED_TOL: f64 = 1e-6;
/// Entries with `|ω̂_ij| < ZERO_REL_TOL * max|ω̂|` count as structural zeros.
pub const ZERO_REL_TOL: f64 = 1e-6;

/// Solver settings shared by ACLIME and CLIME.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    pub stage1: AdmmParams,
    pub stage2: AdmmParams,
    /// Columns per block (`k`).
    pub block_size: usize,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            stage1: AdmmParams::default(),
            stage2: AdmmParams::default(),
            block_size: 64,
        }
    }
}

impl EstimatorOptions {
    pub fn with_rho(rho: f64) -> Self {
        EstimatorOptions {
            stage1: AdmmParams::with_rho(rho),
            stage2: AdmmParams::with_rho(rho),
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.block_size == 0 {
            return Err(Error::InvalidConfig("block size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Precomputed operands: `Ĉ`, its factor and `λ_max(Ĉ)`.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub chat: Array2<f64>,
    pub factor: LowRank,
    pub lambda_max: f64,
    pub n: usize,
}

impl Workspace {
    /// Requires a z-scored covariance (unit diagonal).
    pub fn new(cov: &CovarianceView) -> Result<Self> {
        cov.check_standardized(STANDARDIZED_TOL)?;
        let chat = cov.chat.as_standard_layout().to_owned();
        let factor = LowRank::new(cov.c.view(), cov.n);
        // Ĉ and Lᵀ L + I/n share their largest eigenvalue.
        let lambda_max = lambda_max(factor.gram.view(), POWER_ITERATIONS, POWER_TOL) + factor.inv_n;
        log::debug!("covariance rank {} of {}, lambda_max {lambda_max}", factor.rank(), factor.p());
        Ok(Workspace { chat, factor, lambda_max, n: cov.n })
    }

    pub fn p(&self) -> usize {
        self.chat.nrows()
    }

    /// `‖A_j‖² <= 2 λ_max(Ĉ)² + 2 p τ²` for every stage-1 operator.
    pub fn stage1_norm_sq(&self, tau: f64) -> f64 {
        2.0 * self.lambda_max.powi(2) + 2.0 * self.p() as f64 * tau * tau
    }

    /// `‖Ĉ‖²`, the stage-2 operator norm.
    pub fn stage2_norm_sq(&self) -> f64 {
        self.lambda_max.powi(2)
    }
}

/// Per-stage solver outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub rho: f64,
    pub eta: f64,
    pub block_size: usize,
    /// Per column.
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// Per block, in column order.
    pub traces: Vec<ResidualTrace>,
}

impl SolveReport {
    fn from_blocks(rho: f64, eta: f64, block_size: usize, blocks: &[BlockSolution]) -> Self {
        SolveReport {
            rho,
            eta,
            block_size,
            iterations: blocks.iter().flat_map(|b| b.iterations.iter().copied()).collect(),
            converged: blocks.iter().flat_map(|b| b.converged.iter().copied()).collect(),
            traces: blocks.iter().map(|b| b.trace.clone()).collect(),
        }
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }

    pub fn unconverged(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }

    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }

    /// Elementwise root-sum-square of the block traces, padded with zeros once
    /// a block has finished.
    pub fn combined_trace(&self) -> ResidualTrace {
        let len = self.traces.iter().map(|t| t.len()).max().unwrap_or(0);
        let mut out = ResidualTrace::default();
        for i in 0..len {
            let (mut p, mut d) = (0.0, 0.0);
            for t in &self.traces {
                if i < t.len() {
                    p += t.primal[i] * t.primal[i];
                    d += t.dual[i] * t.dual[i];
                }
            }
            out.push(p.sqrt(), d.sqrt());
        }
        out
    }
}

fn assemble(p: usize, blocks: &[BlockSolution]) -> Array2<f64> {
    let mut out = Array2::zeros((p, p));
    for b in blocks {
        for m in 0..b.x.ncols() {
            out.column_mut(b.start + m).assign(&b.x.column(m));
        }
    }
    out
}

/// Stage-1 output: the full `ω̂¹` matrix (only its diagonal is used later).
#[derive(Debug, Clone)]
pub struct Stage1Result {
    pub omega1: Array2<f64>,
    /// Diagonal of `ω̂¹` with non-positive entries replaced by `sqrt(ln p / n)`.
    pub diagonal: Array1<f64>,
    /// Columns whose `b_jj` came out non-positive.
    pub nonpositive: Vec<usize>,
    pub report: SolveReport,
}

/// Stage 1: `min ‖b‖₁  s.t.  |Ĉ b - e_j|∞ <= τ b_jj` for every column.
pub fn stage1_solve(ws: &Workspace, tau: f64, params: &AdmmParams, block: usize) -> Result<Stage1Result> {
    params.validate()?;
    let p = ws.p();
    let eta = params.resolve_eta(ws.stage1_norm_sq(tau));
    let blocks = solve_all(&ws.factor, Stage::Diagonal { tau }, params, eta, block);
    let omega1 = assemble(p, &blocks);
    let fallback = ((p as f64).ln() / ws.n as f64).sqrt();
    let mut nonpositive = Vec::new();
    let diagonal = Array1::from_shape_fn(p, |j| {
        let d = omega1[[j, j]];
        if d > 0.0 {
            d
        } else {
            nonpositive.push(j);
            fallback
        }
    });
    if !nonpositive.is_empty() {
        log::warn!("stage 1: {} columns with non-positive diagonal", nonpositive.len());
    }
    let report = SolveReport::from_blocks(params.rho, eta, block, &blocks);
    Ok(Stage1Result { omega1, diagonal, nonpositive, report })
}

/// `ω̆_jj = ω̂¹_jj` if `c_jj <= sqrt(n / ln p)`, else `sqrt(ln p / n)`.
pub fn correct_diagonal(omega1_diag: &Array1<f64>, c_diag: &Array1<f64>, p: usize, n: usize) -> Array1<f64> {
    let ratio = (p as f64).ln() / n as f64;
    let ceiling = (1.0 / ratio).sqrt();
    let replacement = ratio.sqrt();
    Array1::from_shape_fn(omega1_diag.len(), |j| {
        if c_diag[j] <= ceiling {
            omega1_diag[j]
        } else {
            replacement
        }
    })
}

/// Stage 2: `min ‖b‖₁  s.t.  ‖Ĉ b - e_j‖∞ <= λ_j` for every column.
/// Returns the unsymmetrized `ω̃¹`.
pub fn stage2_solve(
    ws: &Workspace,
    lambdas: &Array1<f64>,
    params: &AdmmParams,
    block: usize,
) -> Result<(Array2<f64>, SolveReport)> {
    params.validate()?;
    let p = ws.p();
    if lambdas.len() != p {
        return Err(Error::DimensionMismatch(format!("{} thresholds for p = {p}", lambdas.len())));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::InvalidConfig(format!("thresholds must be > 0, found {bad}")));
    }
    let eta = params.resolve_eta(ws.stage2_norm_sq());
    let lambdas = lambdas.to_vec();
    let blocks = solve_all(&ws.factor, Stage::Adaptive { lambdas: &lambdas }, params, eta, block);
    Ok((assemble(p, &blocks), SolveReport::from_blocks(params.rho, eta, block, &blocks)))
}

/// `ω̂_ij = ω̂_ji =` whichever of `ω̃_ij`, `ω̃_ji` has the smaller magnitude;
/// ties keep the upper-triangle entry.
pub fn symmetrize(omega_tilde: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (r, c) = omega_tilde.dim();
    if r != c {
        return Err(Error::DimensionMismatch(format!("symmetrize needs a square matrix, got {r}x{c}")));
    }
    let mut out = omega_tilde.to_owned();
    for i in 0..r {
        for j in (i + 1)..r {
            let (a, b) = (omega_tilde[[i, j]], omega_tilde[[j, i]]);
            let v = if a.abs() <= b.abs() { a } else { b };
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

/// Full ACLIME estimate with everything recorded along the way.
#[derive(Debug, Clone)]
pub struct PrecisionEstimate {
    pub omega_tilde: Array2<f64>,
    pub omega_hat: Array2<f64>,
    /// Stage-1 diagonal `ω̂¹_jj` (after the positivity fallback).
    pub omega1_diag: Array1<f64>,
    pub omega_breve: Array1<f64>,
    pub lambda_per_col: Array1<f64>,
    pub tau: f64,
    pub delta: f64,
    pub stage1: Option<SolveReport>,
    pub stage2: SolveReport,
}

impl PrecisionEstimate {
    pub fn all_converged(&self) -> bool {
        self.stage1.as_ref().is_none_or(|r| r.all_converged()) && self.stage2.all_converged()
    }
}

/// Runs both stages on a z-scored covariance.
pub fn aclime_from_covariance(cov: &CovarianceView, delta: f64, opts: &EstimatorOptions) -> Result<PrecisionEstimate> {
    opts.validate()?;
    let ws = Workspace::new(cov)?;
    aclime_with_workspace(&ws, &cov.c.diag().to_owned(), delta, opts)
}

pub fn aclime_with_workspace(
    ws: &Workspace,
    c_diag: &Array1<f64>,
    delta: f64,
    opts: &EstimatorOptions,
) -> Result<PrecisionEstimate> {
    let p = ws.p();
    let tau = match tau_checked(delta, p, ws.n) {
        Ok(t) => t,
        Err(Error::DeltaBelowTheory(d)) => {
            log::warn!("delta = {d} < 2: outside the range covered by the adaptive bound");
            crate::dataset::tau(delta, p, ws.n)
        }
        Err(e) => return Err(e),
    };
    let s1 = stage1_solve(ws, tau, &opts.stage1, opts.block_size)?;
    let omega_breve = correct_diagonal(&s1.diagonal, c_diag, p, ws.n);
    let lambda_per_col = omega_breve.mapv(|w| tau * w.sqrt());
    let (omega_tilde, stage2) = stage2_solve(ws, &lambda_per_col, &opts.stage2, opts.block_size)?;
    let omega_hat = symmetrize(omega_tilde.view())?;
    Ok(PrecisionEstimate {
        omega_tilde,
        omega_hat,
        omega1_diag: s1.diagonal,
        omega_breve,
        lambda_per_col,
        tau,
        delta,
        stage1: Some(s1.report),
        stage2,
    })
}

/// Covariance, `τ_n`, both stages and symmetrization from a z-scored design.
pub fn aclime_estimate(x: &DesignMatrix, delta: f64, opts: &EstimatorOptions) -> Result<PrecisionEstimate> {
    let cov = sample_covariance(x)?;
    aclime_from_covariance(&cov, delta, opts)
}

/// CLIME baseline: stage 2 with one threshold for every column, symmetrized.
pub fn clime_estimate(cov: &CovarianceView, lambda: f64, opts: &EstimatorOptions) -> Result<PrecisionEstimate> {
    opts.validate()?;
    let ws = Workspace::new(cov)?;
    clime_with_workspace(&ws, lambda, opts)
}

pub fn clime_with_workspace(ws: &Workspace, lambda: f64, opts: &EstimatorOptions) -> Result<PrecisionEstimate> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
    }
    let p = ws.p();
    let lambdas = Array1::from_elem(p, lambda);
    let (omega_tilde, stage2) = stage2_solve(ws, &lambdas, &opts.stage2, opts.block_size)?;
    let omega_hat = symmetrize(omega_tilde.view())?;
    Ok(PrecisionEstimate {
        omega_tilde,
        omega_hat,
        omega1_diag: Array1::zeros(0),
        omega_breve: Array1::zeros(0),
        lambda_per_col: lambdas,
        tau: f64::NAN,
        delta: f64::NAN,
        stage1: None,
        stage2,
    })
}

/// Off-diagonal support `{(i, j) : i < j, |ω̂_ij| >= rel_tol * max|ω̂|}`.
pub fn support(omega: ArrayView2<f64>, rel_tol: f64) -> Vec<(usize, usize)> {
    let cutoff = rel_tol * omega.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let p = omega.nrows();
    let mut out = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            if omega[[i, j]].abs() >= cutoff && omega[[i, j]] != 0.0 {
                out.push((i, j));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
