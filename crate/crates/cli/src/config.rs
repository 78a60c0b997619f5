//! Pipeline configuration: a flat `key=value` file, overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lagnet::aclime::{EstimatorOptions, ZERO_REL_TOL};
use lagnet::admm::{AdmmParams, DEFAULT_MAX_ITER, DEFAULT_TOL_ABS, DEFAULT_TOL_REL};
use lagnet::container::parse_key_values;
use lagnet::graph_velocity::{IncidenceMode, DEFAULT_MIN_STRENGTH};
use lagnet::pde_sim::{
    make_velocity_field, max_stable_dt, Grid, Scenario, SimConfig, DEFAULT_KAPPA, DEFAULT_RUN_STEPS,
    STABILITY_SAFETY,
};
use lagnet::{Error, Result};

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "LAGNET_OUT";
pub const DEFAULT_OUT: &str = "lagnet-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Aclime,
    Clime,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Aclime => "aclime",
            Method::Clime => "clime",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aclime" => Ok(Method::Aclime),
            "clime" => Ok(Method::Clime),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}' (aclime or clime)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scenario: Scenario,
    pub width: usize,
    pub height: usize,
    pub kappa: f64,
    /// `None` picks `STABILITY_SAFETY` times the largest stable step.
    pub dt: Option<f64>,
    pub run_steps: usize,
    /// `None` uses the scenario's own stride.
    pub stride: Option<usize>,
    pub lags: usize,
    pub delta: f64,
    pub rho1: f64,
    pub eta1: Option<f64>,
    pub rho2: f64,
    pub eta2: Option<f64>,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    pub block: usize,
    pub method: Method,
    /// CLIME threshold; `None` uses `τ_n`.
    pub lambda: Option<f64>,
    /// Relative to `max|ω̂|`.
    pub zero_tol: f64,
    pub min_strength: usize,
    pub mode: IncidenceMode,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Rayon threads; 0 keeps the rayon default.
    pub workers: usize,
    /// Samples drawn by `stability-check`.
    pub samples: usize,
    /// `ρ` values swept by `stability-check`.
    pub rhos: Vec<f64>,
    /// Treat non-convergence as a numeric failure.
    pub strict: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scenario: Scenario::Ring,
            width: 20,
            height: 20,
            kappa: DEFAULT_KAPPA,
            dt: None,
            run_steps: DEFAULT_RUN_STEPS,
            stride: None,
            lags: 20,
            delta: 2.0,
            rho1: 1.0,
            eta1: None,
            rho2: 1.0,
            eta2: None,
            tol_abs: DEFAULT_TOL_ABS,
            tol_rel: DEFAULT_TOL_REL,
            max_iter: DEFAULT_MAX_ITER,
            block: 64,
            method: Method::Aclime,
            lambda: None,
            zero_tol: ZERO_REL_TOL,
            min_strength: DEFAULT_MIN_STRENGTH,
            mode: IncidenceMode::BothIncident,
            out_dir: PathBuf::from(DEFAULT_OUT),
            seed: 0,
            workers: 0,
            samples: 1500,
            rhos: vec![0.1, 0.5, 1.0, 2.0],
            strict: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{}'", value.trim())))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.trim() {
        "" | "auto" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: expected a boolean, got '{value}'"))),
    }
}

/// `"20"` or `"20x16"` (width x height).
pub fn parse_grid(value: &str) -> Result<(usize, usize)> {
    let v = value.trim().to_ascii_lowercase();
    match v.split_once('x') {
        Some((w, h)) => Ok((parse("grid", w)?, parse("grid", h)?)),
        None => {
            let side = parse("grid", &v)?;
            Ok((side, side))
        }
    }
}

impl PipelineConfig {
    /// Every key accepted by [`PipelineConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "scenario", "grid", "kappa", "dt", "run_steps", "stride", "lags", "delta", "rho", "rho1", "eta1",
        "rho2", "eta2", "tol_abs", "tol_rel", "max_iter", "block", "method", "lambda", "zero_tol",
        "min_strength", "mode", "out_dir", "seed", "workers", "samples", "rhos", "strict",
    ];

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "scenario" => self.scenario = value.parse()?,
            "grid" => (self.width, self.height) = parse_grid(value)?,
            "kappa" => self.kappa = parse(&key, value)?,
            "dt" => self.dt = optional(&key, value)?,
            "run_steps" | "steps" => self.run_steps = parse(&key, value)?,
            "stride" => self.stride = optional(&key, value)?,
            "lags" => self.lags = parse(&key, value)?,
            "delta" => self.delta = parse(&key, value)?,
            "rho" => {
                self.rho1 = parse(&key, value)?;
                self.rho2 = self.rho1;
            }
            "rho1" => self.rho1 = parse(&key, value)?,
            "rho2" => self.rho2 = parse(&key, value)?,
            "eta1" => self.eta1 = optional(&key, value)?,
            "eta2" => self.eta2 = optional(&key, value)?,
            "tol_abs" => self.tol_abs = parse(&key, value)?,
            "tol_rel" => self.tol_rel = parse(&key, value)?,
            "max_iter" => self.max_iter = parse(&key, value)?,
            "block" => self.block = parse(&key, value)?,
            "method" => self.method = value.parse()?,
            "lambda" => self.lambda = optional(&key, value)?,
            "zero_tol" => self.zero_tol = parse(&key, value)?,
            "min_strength" => self.min_strength = parse(&key, value)?,
            "mode" => self.mode = value.parse()?,
            "out_dir" | "out" => self.out_dir = PathBuf::from(value.trim()),
            "seed" => self.seed = parse(&key, value)?,
            "workers" => self.workers = parse(&key, value)?,
            "samples" => self.samples = parse(&key, value)?,
            "rhos" => {
                self.rhos = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse("rhos", s))
                    .collect::<Result<_>>()?
            }
            "strict" => self.strict = parse_bool(&key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies the settings of a `key=value` file in order.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (k, v) in parse_key_values(&text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Checks every setting that does not need data.
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.sim_config()?;
        if self.lags == 0 {
            return Err(Error::InvalidConfig("lags must be >= 1".into()));
        }
        if self.lags > self.run_steps {
            return Err(Error::RunTooShort { run: 0, rows: self.run_steps, lags: self.lags });
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidConfig(format!("delta must be > 0, got {}", self.delta)));
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidConfig(format!("lambda must be > 0, got {l}")));
            }
        }
        if !(self.zero_tol.is_finite() && self.zero_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("zero_tol must be >= 0, got {}", self.zero_tol)));
        }
        if self.samples < 2 {
            return Err(Error::TooFewSamples(self.samples));
        }
        if self.rhos.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidConfig("every rho in rhos must be > 0".into()));
        }
        let opts = self.estimator_options();
        opts.stage1.validate()?;
        opts.stage2.validate()?;
        if self.block == 0 {
            return Err(Error::InvalidConfig("block must be >= 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.width, self.height)
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or_else(|| self.scenario.stride())
    }

    /// The scenario with the configured stride folded in: a subsampled ring
    /// is the fast ring.
    pub fn effective_scenario(&self) -> Scenario {
        match (self.scenario, self.stride()) {
            (Scenario::Ring | Scenario::FastRing { .. }, s) if s > 1 => Scenario::FastRing { stride: s },
            (Scenario::FastRing { .. }, _) => Scenario::Ring,
            (other, _) => other,
        }
    }

    /// Simulation settings with `dt` resolved and the stability bound checked.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let grid = self.grid()?;
        if self.stride() == 0 {
            return Err(Error::InvalidConfig("stride must be >= 1".into()));
        }
        let scenario = self.effective_scenario();
        let field = make_velocity_field(scenario, grid);
        let dt = match self.dt {
            Some(dt) => dt,
            None => STABILITY_SAFETY * max_stable_dt(&field, self.kappa)?,
        };
        let cfg = SimConfig { kappa: self.kappa, dt, run_steps: self.run_steps, scenario };
        cfg.validate(&field)?;
        Ok(cfg)
    }

    pub fn estimator_options(&self) -> EstimatorOptions {
        let params = |rho, eta| AdmmParams {
            rho,
            eta,
            tol_abs: self.tol_abs,
            tol_rel: self.tol_rel,
            max_iter: self.max_iter,
        };
        EstimatorOptions {
            stage1: params(self.rho1, self.eta1),
            stage2: params(self.rho2, self.eta2),
            block_size: self.block,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_round_trip_through_set() {
        let mut cfg = PipelineConfig::default();
        for key in PipelineConfig::KEYS {
            let value = match *key {
                "scenario" => "cross-current",
                "grid" => "12x10",
                "method" => "clime",
                "mode" => "outgoing",
                "out_dir" => "somewhere",
                "rhos" => "0.5,1",
                "strict" => "true",
                "dt" | "eta1" | "eta2" | "lambda" => "0.25",
                "kappa" | "delta" | "rho" | "rho1" | "rho2" | "tol_abs" | "tol_rel" | "zero_tol" => "0.5",
                _ => "3",
            };
            cfg.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
        assert_eq!((cfg.width, cfg.height), (12, 10));
        assert_eq!(cfg.scenario, Scenario::CrossCurrent);
        assert_eq!(cfg.method, Method::Clime);
        assert_eq!(cfg.lambda, Some(0.25));
        assert_eq!(cfg.rhos, vec![0.5, 1.0]);
        assert!(cfg.strict);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("grid", "ax3").is_err());
        assert!(cfg.set("method", "glasso").is_err());
        assert!(cfg.set("strict", "maybe").is_err());
        cfg.set("dt", "100").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Unstable { .. })));
        cfg.set("dt", "auto").unwrap();
        cfg.validate().unwrap();
        cfg.set("lags", "40").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::RunTooShort { .. })));
    }

    #[test]
    fn stride_selects_fast_ring() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(cfg.effective_scenario(), Scenario::Ring);
        cfg.set("stride", "10").unwrap();
        assert_eq!(cfg.effective_scenario(), Scenario::FastRing { stride: 10 });
        cfg.set("scenario", "fast-ring").unwrap();
        cfg.set("stride", "auto").unwrap();
        assert_eq!(cfg.stride(), 10);
        cfg.set("stride", "1").unwrap();
        assert_eq!(cfg.effective_scenario(), Scenario::Ring);
    }
}
