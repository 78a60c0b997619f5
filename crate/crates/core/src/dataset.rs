//! Lagged static datasets and their covariance.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::pde_sim::RawRuns;

/// Columns with a sample standard deviation below this are treated as constant.
pub const CONSTANT_SD: f64 = 1e-12;

/// `n x p` sample matrix over lagged variables. Variable `loc * lags + lag`
/// holds location `loc` at offset `lag` (lag 0 is the earliest time).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub samples: Array2<f64>,
    pub locations: usize,
    pub lags: usize,
}

impl DesignMatrix {
    pub fn new(samples: Array2<f64>, locations: usize, lags: usize) -> Result<Self> {
        if samples.ncols() != locations * lags {
            return Err(Error::DimensionMismatch(format!(
                "{} columns but q x T = {} x {}",
                samples.ncols(),
                locations,
                lags
            )));
        }
        Ok(DesignMatrix { samples, locations, lags })
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn p(&self) -> usize {
        self.samples.ncols()
    }

    pub fn variable(&self, loc: usize, lag: usize) -> usize {
        loc * self.lags + lag
    }
}

/// Inverse of [`DesignMatrix::variable`].
pub fn decode_variable(var: usize, lags: usize) -> (usize, usize) {
    (var / lags, var % lags)
}

/// Expands every run into `rows - T + 1` lagged samples. Samples never span
/// two runs.
pub fn lag_expand(runs: &RawRuns, lags: usize) -> Result<DesignMatrix> {
    if lags == 0 {
        return Err(Error::InvalidConfig("lag count must be >= 1".into()));
    }
    let q = runs.locations();
    for (i, run) in runs.runs.iter().enumerate() {
        if run.nrows() < lags {
            return Err(Error::RunTooShort { run: i, rows: run.nrows(), lags });
        }
        if run.ncols() != q {
            return Err(Error::DimensionMismatch(format!(
                "run {i} has {} locations, expected {q}",
                run.ncols()
            )));
        }
    }
    let n: usize = runs.runs.iter().map(|r| r.nrows() - lags + 1).sum();
    let mut samples = Array2::zeros((n, q * lags));
    let mut row = 0;
    for run in &runs.runs {
        for start in 0..=(run.nrows() - lags) {
            let mut out = samples.row_mut(row);
            for loc in 0..q {
                for lag in 0..lags {
                    out[loc * lags + lag] = run[[start + lag, loc]];
                }
            }
            row += 1;
        }
    }
    DesignMatrix::new(samples, q, lags)
}

/// Per-column statistics removed by [`zscore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ZScoreInfo {
    pub mean: Array1<f64>,
    pub sd: Array1<f64>,
    pub constant: Vec<bool>,
}

impl ZScoreInfo {
    pub fn constant_count(&self) -> usize {
        self.constant.iter().filter(|c| **c).count()
    }

    /// `column,mean,sd,constant` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("column,mean,sd,constant\n");
        for j in 0..self.mean.len() {
            s.push_str(&format!(
                "{j},{:e},{:e},{}\n",
                self.mean[j], self.sd[j], self.constant[j] as u8
            ));
        }
        s
    }
}

/// Centers every column and scales it to unit (unbiased) standard deviation.
/// Constant columns are centered only and flagged.
pub fn zscore(x: &DesignMatrix) -> Result<(DesignMatrix, ZScoreInfo)> {
    let n = x.n();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let p = x.p();
    let mut out = x.samples.clone();
    let mut mean = Array1::zeros(p);
    let mut sd = Array1::zeros(p);
    let mut constant = vec![false; p];
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let m = col.sum() / n as f64;
        col.mapv_inplace(|v| v - m);
        let var = col.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
        let s = var.sqrt();
        mean[j] = m;
        sd[j] = s;
        if s < CONSTANT_SD {
            constant[j] = true;
        } else {
            col.mapv_inplace(|v| v / s);
        }
    }
    let z = DesignMatrix { samples: out, locations: x.locations, lags: x.lags };
    Ok((z, ZScoreInfo { mean, sd, constant }))
}

/// Sample covariance `C` and its ridge-shifted copy `Ĉ = C + I/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceView {
    pub c: Array2<f64>,
    pub chat: Array2<f64>,
    pub n: usize,
}

impl CovarianceView {
    /// Builds the view from an already computed covariance.
    pub fn from_covariance(c: Array2<f64>, n: usize) -> Result<Self> {
        if c.nrows() != c.ncols() {
            return Err(Error::DimensionMismatch("covariance must be square".into()));
        }
        if n == 0 {
            return Err(Error::TooFewSamples(0));
        }
        let mut chat = c.clone();
        let shift = 1.0 / n as f64;
        chat.diag_mut().mapv_inplace(|v| v + shift);
        Ok(CovarianceView { c, chat, n })
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Checks the unit-diagonal precondition shared by every solver.
    pub fn check_standardized(&self, tol: f64) -> Result<()> {
        for (i, v) in self.c.diag().iter().enumerate() {
            if (v - 1.0).abs() > tol {
                return Err(Error::NotStandardized { index: i, value: *v });
            }
        }
        Ok(())
    }
}

/// `C = XᵀX / (n - 1)` for a z-scored design, symmetrized by averaging with
/// its transpose.
pub fn sample_covariance(x: &DesignMatrix) -> Result<CovarianceView> {
    let n = x.n();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mut c = x.samples.t().dot(&x.samples);
    c.mapv_inplace(|v| v / (n - 1) as f64);
    let sym = (&c + &c.t()) * 0.5;
    CovarianceView::from_covariance(sym, n)
}

/// `τ_n = δ sqrt(ln p / n)`. Values of `δ` below 2 are computed but returned
/// as [`Error::DeltaBelowTheory`] by [`tau_checked`].
pub fn tau(delta: f64, p: usize, n: usize) -> f64 {
    tau_from_log(delta, (p as f64).ln(), n)
}

/// `τ_n` given `ln p` directly.
pub fn tau_from_log(delta: f64, ln_p: f64, n: usize) -> f64 {
    delta * (ln_p / n as f64).sqrt()
}

pub fn tau_checked(delta: f64, p: usize, n: usize) -> Result<f64> {
    if p < 2 || n < 1 {
        return Err(Error::InvalidConfig(format!("tau needs p >= 2 and n >= 1, got p={p}, n={n}")));
    }
    if delta < 2.0 {
        return Err(Error::DeltaBelowTheory(delta));
    }
    Ok(tau(delta, p, n))
}
