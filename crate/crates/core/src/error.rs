use thiserror::Error;

/// Errors raised across the simulation, estimation and scoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(
        "time step {dt} violates the stability bound (bound value {bound:.6} > 1; largest stable dt is {max_dt:.6})"
    )]
    Unstable { dt: f64, bound: f64, max_dt: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("stride {stride} exceeds run length {len}")]
    StrideTooLarge { stride: usize, len: usize },

    #[error("run {run} has {rows} rows, fewer than the {lags} lags requested")]
    RunTooShort { run: usize, rows: usize, lags: usize },

    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("input is not z-scored: diagonal entry {index} of the covariance is {value}")]
    NotStandardized { index: usize, value: f64 },

    #[error("delta = {0} is below 2; the adaptive bound only holds for delta >= 2")]
    DeltaBelowTheory(f64),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("malformed matrix container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
