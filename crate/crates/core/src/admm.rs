//! Closed-form proximal and projection steps shared by the ADMM solvers,
//! plus parameter and residual bookkeeping.

use ndarray::{Array1, Array2, ArrayView2, Zip};

use crate::error::{Error, Result};

/// Soft-thresholding, the proximal map of `kappa * |x|`.
#[inline]
pub fn soft(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

/// Elementwise `sign(v) max(|v| - kappa, 0)`.
pub fn soft_threshold<D: ndarray::Dimension>(
    v: &ndarray::Array<f64, D>,
    kappa: f64,
) -> ndarray::Array<f64, D> {
    v.mapv(|x| soft(x, kappa))
}

/// Elementwise `max(h, 0)`.
pub fn nonneg_project<D: ndarray::Dimension>(h: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    h.mapv(|x| x.max(0.0))
}

/// Clamp of `a` into `[w - lambda, w + lambda]`.
#[inline]
pub fn clamp_box(a: f64, w: f64, lambda: f64) -> f64 {
    if a - w > lambda {
        w + lambda
    } else if a - w < -lambda {
        w - lambda
    } else {
        a
    }
}

/// Elementwise projection onto the ∞-norm ball of radius `lambda` around `w`.
pub fn box_project(a: &Array1<f64>, w: &Array1<f64>, lambda: f64) -> Array1<f64> {
    let mut out = a.clone();
    Zip::from(&mut out).and(w).for_each(|o, &wi| *o = clamp_box(*o, wi, lambda));
    out
}

/// ADMM tuning. `eta_*` left as `None` are set from the stability condition
/// once the covariance is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmParams {
    pub rho: f64,
    pub eta: Option<f64>,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
}

pub const DEFAULT_TOL_ABS: f64 = 1e-5;
pub const DEFAULT_TOL_REL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 2000;
/// Multiplier applied on top of the stability condition when `eta` is automatic.
pub const ETA_MARGIN: f64 = 1.05;

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            rho: 1.0,
            eta: None,
            tol_abs: DEFAULT_TOL_ABS,
            tol_rel: DEFAULT_TOL_REL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl AdmmParams {
    pub fn with_rho(rho: f64) -> Self {
        AdmmParams { rho, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::InvalidConfig(format!("rho must be > 0, got {}", self.rho)));
        }
        if let Some(eta) = self.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::InvalidConfig(format!("eta must be > 0, got {eta}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be >= 1".into()));
        }
        if !(self.tol_abs >= 0.0 && self.tol_rel >= 0.0) {
            return Err(Error::InvalidConfig("tolerances must be non-negative".into()));
        }
        Ok(())
    }

    /// `eta`, or `ETA_MARGIN * rho * op_norm_sq` when unset.
    pub fn resolve_eta(&self, op_norm_sq: f64) -> f64 {
        self.eta.unwrap_or(ETA_MARGIN * self.rho * op_norm_sq)
    }
}

/// Largest eigenvalue of a symmetric matrix by power iteration.
pub fn lambda_max(m: ArrayView2<f64>, max_iter: usize, tol: f64) -> f64 {
    let p = m.nrows();
    if p == 0 {
        return 0.0;
    }
    // Deterministic, non-degenerate start.
    let mut v = Array1::from_shape_fn(p, |i| 1.0 + (i % 7) as f64 * 0.1);
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = m.dot(&v);
        let next = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        let done = (next - estimate).abs() <= tol * next.abs().max(1.0);
        estimate = next;
        if done {
            break;
        }
    }
    // The Rayleigh quotient approaches from below; ‖Mv‖ bounds it from above.
    estimate.max(m.dot(&v).dot(&m.dot(&v)).sqrt())
}

pub const POWER_ITERATIONS: usize = 50;
pub const POWER_TOL: f64 = 1e-8;

/// Residual criteria of one column: returns `(primal_ok, dual_ok)`.
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub primal_dim: usize,
    pub dual_dim: usize,
}

impl StopRule {
    pub fn primal_threshold(&self, scale: f64) -> f64 {
        (self.primal_dim as f64).sqrt() * self.tol_abs + self.tol_rel * scale
    }

    pub fn dual_threshold(&self, scale: f64) -> f64 {
        (self.dual_dim as f64).sqrt() * self.tol_abs + self.tol_rel * scale
    }
}

/// Per-iteration primal/dual residual norms of one solve (or one column block).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualTrace {
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
}

impl ResidualTrace {
    pub fn push(&mut self, primal: f64, dual: f64) {
        self.primal.push(primal);
        self.dual.push(dual);
    }

    pub fn len(&self) -> usize {
        self.primal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primal.is_empty()
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        Some((*self.primal.last()?, *self.dual.last()?))
    }

    /// First iteration (1-based) from which both residuals stay below `tol`.
    pub fn settled_below(&self, tol: f64) -> Option<usize> {
        let mut first = None;
        for (i, (p, d)) in self.primal.iter().zip(&self.dual).enumerate() {
            if *p <= tol && *d <= tol {
                first.get_or_insert(i + 1);
            } else {
                first = None;
            }
        }
        first
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,primal,dual\n");
        for (i, (p, d)) in self.primal.iter().zip(&self.dual).enumerate() {
            s.push_str(&format!("{},{:e},{:e}\n", i + 1, p, d));
        }
        s
    }
}

/// Frobenius norm.
pub fn fro(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn soft_examples() {
        assert!((soft(0.5, 0.2) - 0.3).abs() < 1e-15);
        assert_eq!(soft(-0.1, 0.2), 0.0);
        assert_eq!(soft(-3.25, 0.0), -3.25);
        let v = soft_threshold(&array![0.5, -0.1, -1.0], 0.2);
        assert!((v[0] - 0.3).abs() < 1e-15 && v[1] == 0.0 && (v[2] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn nonneg_examples() {
        assert_eq!(nonneg_project(&array![-1.0, 2.0]), array![0.0, 2.0]);
        assert_eq!(nonneg_project(&array![-1.0, -2.0]), array![0.0, 0.0]);
        let h = array![-0.5, 0.0, 3.0];
        assert_eq!(nonneg_project(&nonneg_project(&h)), nonneg_project(&h));
    }

    #[test]
    fn box_examples() {
        assert!((clamp_box(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(clamp_box(0.9, 1.0, 0.2), 0.9);
        assert!((clamp_box(0.5, 1.0, 0.2) - 0.8).abs() < 1e-15);
        let out = box_project(&array![1.5, 0.9, 0.5], &array![1.0, 1.0, 1.0], 0.2);
        assert!((out[0] - 1.2).abs() < 1e-15 && out[1] == 0.9 && (out[2] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn power_iteration_matches_known_spectrum() {
        let m = array![[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
        // Eigenvalues 2 - sqrt 2, 2, 2 + sqrt 2.
        let l = lambda_max(m.view(), 200, 1e-14);
        assert!((l - (2.0 + 2f64.sqrt())).abs() < 1e-8);
    }

    #[test]
    fn trace_settles() {
        let mut t = ResidualTrace::default();
        for (p, d) in [(1.0, 1.0), (1e-4, 1e-2), (1e-4, 1e-4), (1e-5, 1e-6)] {
            t.push(p, d);
        }
        assert_eq!(t.settled_below(1e-3), Some(3));
        assert!(t.to_csv().starts_with("iteration,primal,dual\n1,"));
    }

    proptest! {
        #[test]
        fn soft_is_nonexpansive(u in -10.0..10.0f64, v in -10.0..10.0f64, k in 0.0..5.0f64) {
            prop_assert!((soft(u, k) - soft(v, k)).abs() <= (u - v).abs() + 1e-15);
        }

        #[test]
        fn box_output_within_radius(a in -10.0..10.0f64, w in -10.0..10.0f64, l in 0.0..5.0f64) {
            prop_assert!((clamp_box(a, w, l) - w).abs() <= l + 1e-12);
        }
    }
}
