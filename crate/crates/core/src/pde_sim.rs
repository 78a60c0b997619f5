//! Two-dimensional advection–diffusion testbed on a periodic square grid.
//!
//! The update is an explicit Euler step in flux form: first-order upwind
//! fluxes for advection (face velocity = mean of the two adjacent cell
//! velocities) and central differences for diffusion. Every face flux leaves
//! one cell and enters its neighbour, so total mass is conserved up to
//! rounding on the periodic grid.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Periodic rectangular grid. Cells are stored row-major: `index = y * width + x`,
/// with `x` growing left→right and `y` growing bottom→top.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
}

impl Grid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::with_spacing(width, height, 1.0)
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn with_spacing(width: usize, height: usize, spacing: f64) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidGrid(format!(
                "grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        Ok(Grid { width, height, spacing })
    }

    /// Number of cells, `q` in the lagged model.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    /// Index of the cell at `(x + dx, y + dy)` with wrap-around.
    pub fn offset(&self, index: usize, dx: isize, dy: isize) -> usize {
        let (x, y) = self.coords(index);
        let nx = (x as isize + dx).rem_euclid(self.width as isize) as usize;
        let ny = (y as isize + dy).rem_euclid(self.height as isize) as usize;
        self.index(nx, ny)
    }

    /// Shortest displacement from `from` to `to` on the torus, in cells.
    /// Exact half-way ties resolve to the positive direction.
    pub fn wrap_displacement(&self, from: usize, to: usize) -> (isize, isize) {
        let (fx, fy) = self.coords(from);
        let (tx, ty) = self.coords(to);
        (
            minimal_wrap(tx as isize - fx as isize, self.width as isize),
            minimal_wrap(ty as isize - fy as isize, self.height as isize),
        )
    }

    /// Cell that plays the role of the grid center (`(width/2, height/2)`,
    /// rounded down), so even-sized grids still have a cell with zero radius.
    pub fn center(&self) -> (f64, f64) {
        ((self.width / 2) as f64, (self.height / 2) as f64)
    }
}

fn minimal_wrap(d: isize, n: isize) -> isize {
    let mut d = d.rem_euclid(n);
    if 2 * d > n {
        d -= n;
    }
    d
}

/// Scalar state `f(x, y, t)` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField { grid, values: vec![0.0; grid.len()] }
    }

    /// Unit impulse at `cell`, zero elsewhere.
    pub fn impulse(grid: Grid, cell: usize) -> Self {
        let mut f = Self::zeros(grid);
        f.values[cell] = 1.0;
        f
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "field has {} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Advection velocity per cell, in cells per unit time.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: Grid,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(grid: Grid) -> Self {
        VelocityField { grid, vx: vec![0.0; grid.len()], vy: vec![0.0; grid.len()] }
    }

    pub fn uniform(grid: Grid, vx: f64, vy: f64) -> Self {
        VelocityField { grid, vx: vec![vx; grid.len()], vy: vec![vy; grid.len()] }
    }

    pub fn get(&self, cell: usize) -> (f64, f64) {
        (self.vx[cell], self.vy[cell])
    }

    pub fn magnitude(&self, cell: usize) -> f64 {
        self.vx[cell].hypot(self.vy[cell])
    }

    /// The same field multiplied by `factor` (used to convert to cells per
    /// recorded step).
    pub fn scaled(&self, factor: f64) -> Self {
        VelocityField {
            grid: self.grid,
            vx: self.vx.iter().map(|v| v * factor).collect(),
            vy: self.vy.iter().map(|v| v * factor).collect(),
        }
    }

    fn max_abs(&self) -> (f64, f64) {
        let mx = self.vx.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let my = self.vy.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (mx, my)
    }
}

/// The benchmark advection fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Counter-clockwise rotation, speed proportional to distance from center.
    Circular,
    /// Tangential unit-speed flow inside a ring band, zero elsewhere.
    Ring,
    /// A left→right and a bottom→top current over a slow background drift.
    CrossCurrent,
    /// The ring field observed at every `stride`-th step.
    FastRing { stride: usize },
}

pub const DEFAULT_FAST_STRIDE: usize = 10;

/// Ring band in units of the half-width.
pub const RING_INNER: f64 = 0.30;
pub const RING_OUTER: f64 = 0.65;
/// Speed of the slow drift outside the cross currents.
pub const CROSS_BACKGROUND: f64 = 0.05;

impl Scenario {
    /// Subsampling stride applied to the raw runs (1 except for the fast ring).
    pub fn stride(&self) -> usize {
        match self {
            Scenario::FastRing { stride } => *stride,
            _ => 1,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Scenario::Circular => "circular".into(),
            Scenario::Ring => "ring".into(),
            Scenario::CrossCurrent => "cross-current".into(),
            Scenario::FastRing { stride } if *stride == DEFAULT_FAST_STRIDE => "fast-ring".into(),
            Scenario::FastRing { stride } => format!("fast-ring:{stride}"),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (head, arg) = match lower.split_once(':') {
            Some((h, a)) => (h.to_string(), Some(a.to_string())),
            None => (lower.clone(), None),
        };
        let scenario = match (head.replace('_', "-").as_str(), arg) {
            ("circular", None) | ("1", None) => Scenario::Circular,
            ("ring", None) | ("2", None) => Scenario::Ring,
            ("cross-current", None) | ("crosscurrent", None) | ("cross", None) | ("3", None) => {
                Scenario::CrossCurrent
            }
            ("fast-ring", None) | ("fastring", None) | ("4", None) => {
                Scenario::FastRing { stride: DEFAULT_FAST_STRIDE }
            }
            ("fast-ring", Some(a)) | ("fastring", Some(a)) => {
                let stride: usize =
                    a.parse().map_err(|_| Error::UnknownScenario(s.to_string()))?;
                if stride == 0 {
                    return Err(Error::UnknownScenario(s.to_string()));
                }
                Scenario::FastRing { stride }
            }
            _ => return Err(Error::UnknownScenario(s.to_string())),
        };
        Ok(scenario)
    }
}

/// Builds the advection field for a scenario.
pub fn make_velocity_field(scenario: Scenario, grid: Grid) -> VelocityField {
    let (cx, cy) = grid.center();
    let mut field = VelocityField::zeros(grid);
    match scenario {
        Scenario::Circular => {
            let r_max = (0..grid.len())
                .map(|i| {
                    let (x, y) = grid.coords(i);
                    (x as f64 - cx).hypot(y as f64 - cy)
                })
                .fold(0.0_f64, f64::max);
            let c = 1.0 / r_max;
            for i in 0..grid.len() {
                let (x, y) = grid.coords(i);
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                field.vx[i] = -c * dy;
                field.vy[i] = c * dx;
            }
        }
        Scenario::Ring | Scenario::FastRing { .. } => {
            let half = grid.width.min(grid.height) as f64 / 2.0;
            let (inner, outer) = (RING_INNER * half, RING_OUTER * half);
            for i in 0..grid.len() {
                let (x, y) = grid.coords(i);
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let r = dx.hypot(dy);
                if r >= inner && r <= outer {
                    field.vx[i] = -dy / r;
                    field.vy[i] = dx / r;
                }
            }
        }
        Scenario::CrossCurrent => {
            let h_band = band(grid.height);
            let v_band = band(grid.width);
            let bg = CROSS_BACKGROUND / std::f64::consts::SQRT_2;
            for i in 0..grid.len() {
                let (x, y) = grid.coords(i);
                let (vx, vy) = if v_band.contains(&x) {
                    (0.0, 1.0)
                } else if h_band.contains(&y) {
                    (1.0, 0.0)
                } else {
                    (bg, bg)
                };
                field.vx[i] = vx;
                field.vy[i] = vy;
            }
        }
    }
    field
}

/// Centered band of `ceil(n / 5)` cells.
fn band(n: usize) -> std::ops::Range<usize> {
    let width = n.div_ceil(5);
    let start = (n / 2).saturating_sub(width / 2);
    start..(start + width).min(n)
}

/// Parameters of one impulse-response simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub kappa: f64,
    pub dt: f64,
    /// Rows recorded per impulse run (row 0 is the impulse itself).
    pub run_steps: usize,
    pub scenario: Scenario,
}

pub const DEFAULT_KAPPA: f64 = 0.1;
pub const DEFAULT_RUN_STEPS: usize = 32;
pub const STABILITY_SAFETY: f64 = 0.9;

impl SimConfig {
    /// Config with `dt` set to `STABILITY_SAFETY` times the largest stable step.
    pub fn with_stable_dt(
        scenario: Scenario,
        grid: Grid,
        kappa: f64,
        run_steps: usize,
    ) -> Result<Self> {
        let field = make_velocity_field(scenario, grid);
        let dt = STABILITY_SAFETY * max_stable_dt(&field, kappa)?;
        let cfg = SimConfig { kappa, dt, run_steps, scenario };
        cfg.validate(&field)?;
        Ok(cfg)
    }

    pub fn validate(&self, field: &VelocityField) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::InvalidConfig(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.run_steps == 0 {
            return Err(Error::InvalidConfig("run_steps must be >= 1".into()));
        }
        let bound = stability_number(field, self.kappa, self.dt);
        if bound > 1.0 + 1e-12 {
            let max_dt = max_stable_dt(field, self.kappa).unwrap_or(0.0);
            return Err(Error::Unstable { dt: self.dt, bound, max_dt });
        }
        Ok(())
    }
}

/// Face velocity between a cell and its right (`axis = 0`) or upper (`axis = 1`)
/// neighbour.
fn face_velocity(field: &VelocityField, cell: usize, axis: usize) -> f64 {
    let grid = field.grid;
    match axis {
        0 => 0.5 * (field.vx[cell] + field.vx[grid.offset(cell, 1, 0)]),
        _ => 0.5 * (field.vy[cell] + field.vy[grid.offset(cell, 0, 1)]),
    }
}

/// Largest per-cell outflow rate `sum(outflow / h)` over the grid.
fn max_outflow_rate(field: &VelocityField) -> f64 {
    let grid = field.grid;
    let h = grid.spacing;
    (0..grid.len())
        .map(|c| {
            let right = face_velocity(field, c, 0).max(0.0);
            let left = (-face_velocity(field, grid.offset(c, -1, 0), 0)).max(0.0);
            let up = face_velocity(field, c, 1).max(0.0);
            let down = (-face_velocity(field, grid.offset(c, 0, -1), 1)).max(0.0);
            (right + left) / h + (up + down) / h
        })
        .fold(0.0, f64::max)
}

/// Left-hand side of the stability bound; the step is accepted when it is `<= 1`.
///
/// For a spatially uniform field this is
/// `dt (|vx|/dx + |vy|/dy) + 2 dt kappa (1/dx^2 + 1/dy^2)`; for general fields
/// the advective part uses the largest total outflow of any single cell, which
/// is what keeps every update coefficient non-negative.
pub fn stability_number(field: &VelocityField, kappa: f64, dt: f64) -> f64 {
    let h = field.grid.spacing;
    dt * max_outflow_rate(field) + 2.0 * dt * kappa * (2.0 / (h * h))
}

pub fn max_stable_dt(field: &VelocityField, kappa: f64) -> Result<f64> {
    let rate = stability_number(field, kappa, 1.0);
    if rate <= 0.0 {
        return Err(Error::InvalidConfig(
            "no advection and no diffusion: every time step is trivially stable, set dt explicitly"
                .into(),
        ));
    }
    let (mx, my) = field.max_abs();
    log::debug!("max |vx| = {mx}, max |vy| = {my}, stability rate = {rate}");
    Ok(1.0 / rate)
}

/// One explicit Euler step. Rejects unstable configurations.
pub fn step(f: &ScalarField, field: &VelocityField, cfg: &SimConfig) -> Result<ScalarField> {
    if f.grid != field.grid {
        return Err(Error::DimensionMismatch("scalar and velocity grids differ".into()));
    }
    cfg.validate(field)?;
    let mut out = vec![0.0; f.values.len()];
    step_into(&f.values, &mut out, field, cfg.kappa, cfg.dt);
    Ok(ScalarField { grid: f.grid, values: out })
}

fn step_into(f: &[f64], out: &mut [f64], field: &VelocityField, kappa: f64, dt: f64) {
    let grid = field.grid;
    let h = grid.spacing;
    let adv = dt / h;
    let dif = dt * kappa / (h * h);
    // Net flux through the right/upper face of every cell.
    let mut flux_x = vec![0.0; f.len()];
    let mut flux_y = vec![0.0; f.len()];
    for c in 0..f.len() {
        let right = grid.offset(c, 1, 0);
        let up = grid.offset(c, 0, 1);
        let u = face_velocity(field, c, 0);
        let v = face_velocity(field, c, 1);
        flux_x[c] = adv * (u.max(0.0) * f[c] + u.min(0.0) * f[right]) - dif * (f[right] - f[c]);
        flux_y[c] = adv * (v.max(0.0) * f[c] + v.min(0.0) * f[up]) - dif * (f[up] - f[c]);
    }
    for c in 0..f.len() {
        let left = grid.offset(c, -1, 0);
        let down = grid.offset(c, 0, -1);
        out[c] = f[c] - (flux_x[c] - flux_x[left]) - (flux_y[c] - flux_y[down]);
    }
}

/// Impulse-response runs: one `(rows x q)` matrix per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRuns {
    pub runs: Vec<Array2<f64>>,
}

impl RawRuns {
    /// Number of spatial variables `q`.
    pub fn locations(&self) -> usize {
        self.runs.first().map_or(0, |r| r.ncols())
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

/// Sends a unit impulse to every grid point (row-major order) and records
/// `cfg.run_steps` consecutive states per run, starting with the impulse.
///
/// Runs execute in parallel; each run owns its state so the output does not
/// depend on the thread count.
pub fn simulate_impulses(cfg: &SimConfig, grid: Grid) -> Result<RawRuns> {
    let field = make_velocity_field(cfg.scenario, grid);
    simulate_with_field(cfg, &field)
}

/// As [`simulate_impulses`] but with an explicit advection field.
pub fn simulate_with_field(cfg: &SimConfig, field: &VelocityField) -> Result<RawRuns> {
    cfg.validate(field)?;
    let grid = field.grid;
    let q = grid.len();
    let runs = (0..q)
        .into_par_iter()
        .map(|cell| {
            let mut run = Array2::zeros((cfg.run_steps, q));
            let mut state = ScalarField::impulse(grid, cell).values;
            let mut next = vec![0.0; q];
            for row in 0..cfg.run_steps {
                if row > 0 {
                    step_into(&state, &mut next, field, cfg.kappa, cfg.dt);
                    std::mem::swap(&mut state, &mut next);
                }
                run.row_mut(row).iter_mut().zip(&state).for_each(|(d, s)| *d = *s);
            }
            run
        })
        .collect();
    Ok(RawRuns { runs })
}

/// Keeps rows `0, stride, 2*stride, ...` of every run.
pub fn subsample_runs(runs: &RawRuns, stride: usize) -> Result<RawRuns> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(runs.runs.len());
    for run in &runs.runs {
        if run.nrows() < stride {
            return Err(Error::StrideTooLarge { stride, len: run.nrows() });
        }
        let rows: Vec<usize> = (0..run.nrows()).step_by(stride).collect();
        out.push(run.select(ndarray::Axis(0), &rows));
    }
    Ok(RawRuns { runs: out })
}

/// Simulates enough raw steps that, after keeping every `stride`-th row,
/// each run has `cfg.run_steps` rows.
pub fn simulate_subsampled(cfg: &SimConfig, grid: Grid, stride: usize) -> Result<RawRuns> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be >= 1".into()));
    }
    if stride == 1 {
        return simulate_impulses(cfg, grid);
    }
    let raw_cfg = SimConfig { run_steps: stride * (cfg.run_steps - 1) + 1, ..*cfg };
    let raw = simulate_impulses(&raw_cfg, grid)?;
    subsample_runs(&raw, stride)
}
