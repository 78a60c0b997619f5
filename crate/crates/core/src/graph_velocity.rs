//! From an estimated precision matrix over lagged variables to a velocity
//! field, and its error against the true advection field.
//!
//! Each nonzero off-diagonal entry links two (location, lag) pairs. Pairs
//! with equal lags are undirected and ignored by the velocity estimate; the
//! rest point from the earlier to the later lag and contribute their periodic
//! displacement divided by the lag difference.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::ArrayView2;

use crate::dataset::decode_variable;
use crate::error::{Error, Result};
use crate::pde_sim::{Grid, VelocityField};

/// Vectors shorter than this count as zero when defining angles.
pub const ZERO_SPEED: f64 = 1e-12;
/// Slack on the color-bin boundaries, in degrees.
const ANGLE_EPS: f64 = 1e-9;
/// Default minimum strength for simulated data.
pub const DEFAULT_MIN_STRENGTH: usize = 0;
/// Minimum strength suggested for observed data.
pub const OBSERVED_MIN_STRENGTH: usize = 10;

/// One nonzero entry of `Ω̂`, decoded into its two lagged endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaggedEdge {
    pub src_loc: usize,
    pub src_lag: usize,
    pub dst_loc: usize,
    pub dst_lag: usize,
    /// `|ω̂_ij|`
    pub weight: f64,
    pub directed: bool,
}

impl LaggedEdge {
    /// Lag difference; zero for undirected edges.
    pub fn travel_time(&self) -> usize {
        self.dst_lag - self.src_lag
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pub locations: usize,
    pub lags: usize,
    pub edges: Vec<LaggedEdge>,
}

impl EdgeSet {
    pub fn directed(&self) -> impl Iterator<Item = &LaggedEdge> {
        self.edges.iter().filter(|e| e.directed)
    }

    pub fn directed_count(&self) -> usize {
        self.directed().count()
    }

    pub fn undirected_count(&self) -> usize {
        self.edges.len() - self.directed_count()
    }

    /// Tab-separated edge list with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("src_loc\tsrc_lag\tdst_loc\tdst_lag\tweight\tdirected\n");
        for e in &self.edges {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:e}\t{}",
                e.src_loc, e.src_lag, e.dst_loc, e.dst_lag, e.weight, e.directed as u8
            );
        }
        out
    }
}

/// Decodes every upper-triangle entry with `|ω̂_ij| >= zero_tol` (and nonzero).
pub fn extract_edges(omega: ArrayView2<f64>, locations: usize, lags: usize, zero_tol: f64) -> Result<EdgeSet> {
    let p = locations * lags;
    if lags == 0 || omega.nrows() != p || omega.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "precision is {}x{}, expected q x T = {locations} x {lags}",
            omega.nrows(),
            omega.ncols()
        )));
    }
    let mut edges = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            let w = omega[[i, j]].abs();
            if w == 0.0 || w < zero_tol {
                continue;
            }
            let (li, ti) = decode_variable(i, lags);
            let (lj, tj) = decode_variable(j, lags);
            let ((src_loc, src_lag), (dst_loc, dst_lag)) =
                if ti <= tj { ((li, ti), (lj, tj)) } else { ((lj, tj), (li, ti)) };
            edges.push(LaggedEdge { src_loc, src_lag, dst_loc, dst_lag, weight: w, directed: ti != tj });
        }
    }
    Ok(EdgeSet { locations, lags, edges })
}

/// Which directed edges count toward a grid point's average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncidenceMode {
    /// Incoming and outgoing edges (simulated data).
    BothIncident,
    /// Outgoing edges only (observed data).
    OutgoingOnly,
}

impl FromStr for IncidenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "both" | "both_incident" => Ok(IncidenceMode::BothIncident),
            "outgoing" | "outgoing_only" => Ok(IncidenceMode::OutgoingOnly),
            _ => Err(Error::InvalidConfig(format!("unknown incidence mode '{s}'"))),
        }
    }
}

/// Estimated velocity per grid point, in cells per recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityReport {
    pub grid: Grid,
    pub est_vx: Vec<f64>,
    pub est_vy: Vec<f64>,
    /// Directed edges incident at each point.
    pub strength: Vec<usize>,
    /// Points whose strength is below the threshold (reported as zero).
    pub weak: Vec<bool>,
}

impl VelocityReport {
    pub fn velocity(&self, cell: usize) -> (f64, f64) {
        (self.est_vx[cell], self.est_vy[cell])
    }
}

/// Unweighted average of `displacement / travel time` over incident directed
/// edges. An edge whose endpoints share a location counts once.
pub fn estimate_velocities(
    edges: &EdgeSet,
    grid: Grid,
    mode: IncidenceMode,
    min_strength: usize,
) -> Result<VelocityReport> {
    let q = grid.len();
    if edges.locations != q {
        return Err(Error::DimensionMismatch(format!(
            "edges span {} locations, grid has {q}",
            edges.locations
        )));
    }
    let mut sx = vec![0.0; q];
    let mut sy = vec![0.0; q];
    let mut strength = vec![0usize; q];
    for e in edges.directed() {
        let (dx, dy) = grid.wrap_displacement(e.src_loc, e.dst_loc);
        let t = e.travel_time() as f64;
        let (vx, vy) = (dx as f64 / t, dy as f64 / t);
        let mut add = |cell: usize| {
            sx[cell] += vx;
            sy[cell] += vy;
            strength[cell] += 1;
        };
        add(e.src_loc);
        if mode == IncidenceMode::BothIncident && e.dst_loc != e.src_loc {
            add(e.dst_loc);
        }
    }
    let mut weak = vec![false; q];
    for c in 0..q {
        if strength[c] == 0 || strength[c] < min_strength {
            weak[c] = strength[c] < min_strength;
            sx[c] = 0.0;
            sy[c] = 0.0;
        } else {
            sx[c] /= strength[c] as f64;
            sy[c] /= strength[c] as f64;
        }
    }
    Ok(VelocityReport { grid, est_vx: sx, est_vy: sy, strength, weak })
}

/// Color code of the per-point error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorBin {
    Blue,
    Black,
    Yellow,
    Red,
}

impl ColorBin {
    pub fn name(self) -> &'static str {
        match self {
            ColorBin::Blue => "blue",
            ColorBin::Black => "black",
            ColorBin::Yellow => "yellow",
            ColorBin::Red => "red",
        }
    }

    fn svg(self) -> &'static str {
        match self {
            ColorBin::Blue => "#1f4fd1",
            ColorBin::Black => "#000000",
            ColorBin::Yellow => "#e0b000",
            ColorBin::Red => "#d11f1f",
        }
    }
}

/// Error at one comparison point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointError {
    pub delta_length: f64,
    /// Degrees in `[0, 180]`; `None` when exactly one vector is zero.
    pub delta_angle: Option<f64>,
    pub color: ColorBin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub rmse_length: f64,
    pub rmse_angle: f64,
    /// Percentage of defined points with `Δα <= 15`.
    pub ppdl15: f64,
    pub defined_points: usize,
    pub points: usize,
}

impl ErrorSummary {
    pub const CSV_HEADER: &'static str = "scenario,method,PPDL15,RMSE-Angle,RMSE-Length";

    pub fn csv_row(&self, scenario: &str, method: &str) -> String {
        format!("{scenario},{method},{:.4},{:.4},{:.4}", self.ppdl15, self.rmse_angle, self.rmse_length)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub summary: ErrorSummary,
    pub points: Vec<PointError>,
}

/// Direction of `v` in degrees, `(-180, 180]`.
pub fn angle_deg(vx: f64, vy: f64) -> f64 {
    vy.atan2(vx).to_degrees()
}

/// Absolute angular difference wrapped to `[0, 180]`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Per-point error between an estimate and the truth.
pub fn point_error(est: (f64, f64), truth: (f64, f64)) -> PointError {
    let le = est.0.hypot(est.1);
    let lt = truth.0.hypot(truth.1);
    let delta_length = (lt - le).abs();
    let (ez, tz) = (le <= ZERO_SPEED, lt <= ZERO_SPEED);
    let delta_angle = match (ez, tz) {
        (true, true) => Some(0.0),
        (false, false) => Some(angle_difference(angle_deg(est.0, est.1), angle_deg(truth.0, truth.1))),
        _ => None,
    };
    let color = match delta_angle {
        Some(d) if d <= 15.0 + ANGLE_EPS => ColorBin::Blue,
        Some(d) if d <= 30.0 + ANGLE_EPS => ColorBin::Black,
        Some(d) if d <= 45.0 + ANGLE_EPS => ColorBin::Yellow,
        Some(_) => ColorBin::Red,
        None if tz && le <= 0.1 => ColorBin::Blue,
        None if tz && le <= 0.5 => ColorBin::Black,
        // Moving truth with no estimate, or a spurious estimate on still fluid.
        None => ColorBin::Red,
    };
    PointError { delta_length, delta_angle, color }
}

/// Scores a report against the truth (both in the same velocity units).
pub fn score(report: &VelocityReport, truth: &VelocityField) -> Result<Scored> {
    if report.grid != truth.grid {
        return Err(Error::DimensionMismatch(format!(
            "report grid {}x{} differs from truth grid {}x{}",
            report.grid.width, report.grid.height, truth.grid.width, truth.grid.height
        )));
    }
    let points: Vec<PointError> =
        (0..report.grid.len()).map(|c| point_error(report.velocity(c), truth.get(c))).collect();
    let n = points.len();
    let rmse_length = (points.iter().map(|e| e.delta_length.powi(2)).sum::<f64>() / n as f64).sqrt();
    let defined: Vec<f64> = points.iter().filter_map(|e| e.delta_angle).collect();
    let (rmse_angle, ppdl15) = if defined.is_empty() {
        (0.0, 0.0)
    } else {
        let m = defined.len() as f64;
        let rmse = (defined.iter().map(|d| d * d).sum::<f64>() / m).sqrt();
        let within = defined.iter().filter(|d| **d <= 15.0 + ANGLE_EPS).count() as f64;
        (rmse, 100.0 * within / m)
    };
    Ok(Scored {
        summary: ErrorSummary { rmse_length, rmse_angle, ppdl15, defined_points: defined.len(), points: n },
        points,
    })
}

/// Per-point CSV: estimate, truth and error.
pub fn velocity_csv(report: &VelocityReport, truth: &VelocityField, scored: &Scored) -> String {
    let mut out =
        String::from("x,y,est_vx,est_vy,strength,truth_vx,truth_vy,delta_L,delta_alpha,color\n");
    for (c, e) in scored.points.iter().enumerate() {
        let (x, y) = report.grid.coords(c);
        let (tx, ty) = truth.get(c);
        let angle = e.delta_angle.map_or("NA".to_string(), |d| format!("{d:.6}"));
        let _ = writeln!(
            out,
            "{x},{y},{:.9},{:.9},{},{:.9},{:.9},{:.9},{angle},{}",
            report.est_vx[c],
            report.est_vy[c],
            report.strength[c],
            tx,
            ty,
            e.delta_length,
            e.color.name()
        );
    }
    out
}

/// Quiver plot of the estimate, arrows colored by error bin, truth in grey.
pub fn quiver_svg(report: &VelocityReport, truth: &VelocityField, scored: &Scored, title: &str) -> String {
    const CELL: f64 = 24.0;
    let g = report.grid;
    let (w, h) = (g.width as f64 * CELL, g.height as f64 * CELL);
    let longest = (0..g.len())
        .map(|c| report.est_vx[c].hypot(report.est_vy[c]).max(truth.magnitude(c)))
        .fold(0.0_f64, f64::max);
    let scale = if longest > 0.0 { 0.45 * CELL / longest } else { 0.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}" viewBox="0 0 {w} {}">"#,
        h + 20.0,
        h + 20.0
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="white" stroke="#888"/>"##);
    let _ = writeln!(s, r#"<text x="4" y="{}" font-size="12" font-family="sans-serif">{}</text>"#, h + 15.0, escape(title));
    for c in 0..g.len() {
        let (x, y) = g.coords(c);
        // Screen y grows downward; grid y grows upward.
        let cx = (x as f64 + 0.5) * CELL;
        let cy = h - (y as f64 + 0.5) * CELL;
        let (tx, ty) = truth.get(c);
        arrow(&mut s, cx, cy, tx * scale, -ty * scale, "#bbbbbb", 1.0);
        let (ex, ey) = report.velocity(c);
        let color = scored.points[c].color.svg();
        if ex.hypot(ey) > ZERO_SPEED {
            arrow(&mut s, cx, cy, ex * scale, -ey * scale, color, 1.6);
        } else {
            let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="1.5" fill="{color}"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}

fn arrow(s: &mut String, x: f64, y: f64, dx: f64, dy: f64, color: &str, width: f64) {
    let len = dx.hypot(dy);
    if len <= 0.0 {
        return;
    }
    let (x2, y2) = (x + dx, y + dy);
    let (ux, uy) = (dx / len, dy / len);
    let head = (0.35 * len).min(5.0);
    let (hx1, hy1) = (x2 - head * (ux - 0.5 * uy), y2 - head * (uy + 0.5 * ux));
    let (hx2, hy2) = (x2 - head * (ux + 0.5 * uy), y2 - head * (uy - 0.5 * ux));
    let _ = writeln!(
        s,
        r#"<path d="M{x:.2},{y:.2} L{x2:.2},{y2:.2} M{hx1:.2},{hy1:.2} L{x2:.2},{y2:.2} L{hx2:.2},{hy2:.2}" stroke="{color}" stroke-width="{width}" fill="none"/>"#
    );
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
