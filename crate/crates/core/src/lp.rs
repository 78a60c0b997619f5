//! Small dense LP solver used as a reference for the ADMM estimators.
//!
//! Solves `min ‖x‖₁ s.t. A x <= b` by splitting `x = x⁺ - x⁻` and running a
//! two-phase tableau simplex with Bland's rule. Only meant for a few dozen
//! variables.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-10;
const MAX_DIM: usize = 30;
const MAX_ROWS: usize = 120;

/// Exact minimizer of `‖x‖₁` subject to `a_ub x <= b_ub`.
///
/// When `nonneg` is `Some(i)`, `x_i` is additionally restricted to be
/// non-negative (the closure of a strict positivity constraint).
pub fn reference_lp_min_l1(
    a_ub: ArrayView2<f64>,
    b_ub: ArrayView1<f64>,
    nonneg: Option<usize>,
) -> Result<Array1<f64>> {
    let (m, d) = a_ub.dim();
    if b_ub.len() != m {
        return Err(Error::DimensionMismatch(format!("A has {m} rows, b has {}", b_ub.len())));
    }
    if d > MAX_DIM || m > MAX_ROWS {
        return Err(Error::DimensionMismatch(format!(
            "reference LP limited to d <= {MAX_DIM}, m <= {MAX_ROWS}; got d = {d}, m = {m}"
        )));
    }
    if nonneg.is_some_and(|i| i >= d) {
        return Err(Error::DimensionMismatch("nonneg index out of range".into()));
    }

    // Structural columns: x⁺ (d), x⁻ (d, skipping `nonneg`), slacks (m),
    // then one artificial per row with a negative right-hand side.
    let neg_cols: Vec<usize> = (0..d).filter(|i| Some(*i) != nonneg).collect();
    let n_struct = d + neg_cols.len();
    let n_real = n_struct + m;
    let artificial_rows: Vec<usize> = (0..m).filter(|&r| b_ub[r] < 0.0).collect();
    let n_cols = n_real + artificial_rows.len();

    let mut t = Tableau::new(m, n_cols);
    for r in 0..m {
        let sign = if b_ub[r] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            t.a[[r, i]] = sign * a_ub[[r, i]];
        }
        for (k, &i) in neg_cols.iter().enumerate() {
            t.a[[r, d + k]] = -sign * a_ub[[r, i]];
        }
        t.a[[r, n_struct + r]] = sign;
        t.rhs[r] = sign * b_ub[r];
        t.basis[r] = n_struct + r;
    }
    for (k, &r) in artificial_rows.iter().enumerate() {
        t.a[[r, n_real + k]] = 1.0;
        t.basis[r] = n_real + k;
    }

    if !artificial_rows.is_empty() {
        let mut cost = vec![0.0; n_cols];
        cost[n_real..].iter_mut().for_each(|c| *c = 1.0);
        t.optimize(&cost, n_cols)?;
        if t.objective(&cost) > 1e-8 {
            return Err(Error::Infeasible);
        }
        t.evict_artificials(n_real);
    }

    let mut cost = vec![0.0; n_cols];
    cost[..n_struct].iter_mut().for_each(|c| *c = 1.0);
    t.optimize(&cost, n_real)?;

    let mut x = Array1::zeros(d);
    for (r, &col) in t.basis.iter().enumerate() {
        if col < d {
            x[col] += t.rhs[r];
        } else if col < n_struct {
            x[neg_cols[col - d]] -= t.rhs[r];
        }
    }
    Ok(x)
}

struct Tableau {
    a: Array2<f64>,
    rhs: Array1<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn new(m: usize, n: usize) -> Self {
        Tableau { a: Array2::zeros((m, n)), rhs: Array1::zeros(m), basis: vec![0; m] }
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis.iter().zip(self.rhs.iter()).map(|(&c, &v)| cost[c] * v).sum()
    }

    fn reduced_cost(&self, cost: &[f64], col: usize) -> f64 {
        let mut r = cost[col];
        for (row, &b) in self.basis.iter().enumerate() {
            r -= cost[b] * self.a[[row, col]];
        }
        r
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.a[[row, col]];
        self.a.row_mut(row).mapv_inplace(|v| v / piv);
        self.rhs[row] /= piv;
        let pivot_row = self.a.row(row).to_owned();
        let pivot_rhs = self.rhs[row];
        for r in 0..self.a.nrows() {
            if r == row {
                continue;
            }
            let f = self.a[[r, col]];
            if f != 0.0 {
                self.a.row_mut(r).scaled_add(-f, &pivot_row);
                self.rhs[r] -= f * pivot_rhs;
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule over the first `allowed` columns.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<()> {
        let limit = 50_000;
        for _ in 0..limit {
            let entering = (0..allowed)
                .filter(|c| !self.basis.contains(c))
                .find(|&c| self.reduced_cost(cost, c) < -PIVOT_EPS);
            let Some(col) = entering else {
                return Ok(());
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for r in 0..self.a.nrows() {
                let v = self.a[[r, col]];
                if v > PIVOT_EPS {
                    let ratio = self.rhs[r] / v;
                    let better = match best {
                        None => true,
                        Some((br, _, bb)) => {
                            ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.basis[r] < bb)
                        }
                    };
                    if better {
                        best = Some((ratio, r, self.basis[r]));
                    }
                }
            }
            let Some((_, row, _)) = best else {
                return Err(Error::Unbounded);
            };
            self.pivot(row, col);
        }
        Err(Error::Unbounded)
    }

    /// Pivots zero-valued artificial variables out of the basis after phase 1.
    fn evict_artificials(&mut self, n_real: usize) {
        for r in 0..self.a.nrows() {
            if self.basis[r] >= n_real {
                if let Some(col) = (0..n_real).find(|&c| self.a[[r, c]].abs() > PIVOT_EPS) {
                    self.pivot(r, col);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_dimensional_lower_bound() {
        // x >= 1  <=>  -x <= -1
        let x = reference_lp_min_l1(array![[-1.0]].view(), array![-1.0].view(), None).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clime_on_identity() {
        // |x - e_j|∞ <= 0.5 on C = I, j = 1.
        let p = 3;
        let j = 1;
        let lambda = 0.5;
        let mut a = Array2::zeros((2 * p, p));
        let mut b = Array1::zeros(2 * p);
        for i in 0..p {
            let e = if i == j { 1.0 } else { 0.0 };
            a[[i, i]] = 1.0;
            b[i] = e + lambda;
            a[[p + i, i]] = -1.0;
            b[p + i] = -e + lambda;
        }
        let x = reference_lp_min_l1(a.view(), b.view(), None).unwrap();
        assert!((x[j] - 0.5).abs() < 1e-12);
        assert!(x[0].abs() < 1e-12 && x[2].abs() < 1e-12);
    }

    #[test]
    fn infeasible_is_reported() {
        // x <= -1 and -x <= -1
        let r = reference_lp_min_l1(array![[1.0], [-1.0]].view(), array![-1.0, -1.0].view(), None);
        assert!(matches!(r, Err(Error::Infeasible)));
    }

    #[test]
    fn nonneg_index_is_respected() {
        // x <= -1 has optimum -1 without the sign restriction, infeasible with it.
        let free = reference_lp_min_l1(array![[1.0]].view(), array![-1.0].view(), None).unwrap();
        assert!((free[0] + 1.0).abs() < 1e-12);
        let r = reference_lp_min_l1(array![[1.0]].view(), array![-1.0].view(), Some(0));
        assert!(matches!(r, Err(Error::Infeasible)));
    }

    /// Solves the square system by Gaussian elimination with partial pivoting.
    fn solve_square(mut m: Array2<f64>, mut rhs: Array1<f64>) -> Option<Array1<f64>> {
        let n = m.nrows();
        for c in 0..n {
            let piv = (c..n).max_by(|&a, &b| m[[a, c]].abs().total_cmp(&m[[b, c]].abs()))?;
            if m[[piv, c]].abs() < 1e-10 {
                return None;
            }
            for k in 0..n {
                m.swap([c, k], [piv, k]);
            }
            rhs.swap(c, piv);
            for r in 0..n {
                if r != c {
                    let f = m[[r, c]] / m[[c, c]];
                    for k in 0..n {
                        m[[r, k]] -= f * m[[c, k]];
                    }
                    rhs[r] -= f * rhs[c];
                }
            }
        }
        Some(Array1::from_shape_fn(n, |i| rhs[i] / m[[i, i]]))
    }

    /// Exhaustive vertex enumeration of `min Σt  s.t.  A x <= b, x - t <= 0, -x - t <= 0`.
    fn brute_force(a: &Array2<f64>, b: &Array1<f64>) -> Option<f64> {
        let (m, d) = a.dim();
        let rows = m + 2 * d;
        let mut g = Array2::zeros((rows, 2 * d));
        let mut h = Array1::zeros(rows);
        for r in 0..m {
            for i in 0..d {
                g[[r, i]] = a[[r, i]];
            }
            h[r] = b[r];
        }
        for i in 0..d {
            g[[m + i, i]] = 1.0;
            g[[m + i, d + i]] = -1.0;
            g[[m + d + i, i]] = -1.0;
            g[[m + d + i, d + i]] = -1.0;
        }
        let mut best: Option<f64> = None;
        let n = 2 * d;
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let sub = Array2::from_shape_fn((n, n), |(r, c)| g[[idx[r], c]]);
            let rhs = Array1::from_shape_fn(n, |r| h[idx[r]]);
            if let Some(z) = solve_square(sub, rhs) {
                if (0..rows).all(|r| g.row(r).dot(&z) <= h[r] + 1e-9) {
                    let obj: f64 = z.slice(ndarray::s![d..]).sum();
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
            // Next combination.
            let mut i = n;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if idx[i] != i + rows - n {
                    break;
                }
                if i == 0 {
                    return best;
                }
            }
            idx[i] += 1;
            for k in i + 1..n {
                idx[k] = idx[k - 1] + 1;
            }
        }
    }

    #[test]
    fn agrees_with_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..40 {
            let d = rng.random_range(1..=3);
            let m = rng.random_range(1..=4);
            let a = Array2::from_shape_fn((m, d), |_| rng.random_range(-2.0..2.0));
            let b = Array1::from_shape_fn(m, |_| rng.random_range(-2.0..2.0));
            let oracle = brute_force(&a, &b);
            match reference_lp_min_l1(a.view(), b.view(), None) {
                Ok(x) => {
                    let obj = x.iter().map(|v| v.abs()).sum::<f64>();
                    let want = oracle.expect("simplex found a point the enumeration missed");
                    assert!((obj - want).abs() < 1e-8, "simplex {obj} vs enumeration {want}");
                    assert!((a.dot(&x) - &b).iter().all(|v| *v <= 1e-9));
                    checked += 1;
                }
                Err(Error::Infeasible) => assert!(oracle.is_none()),
                Err(e) => panic!("unexpected {e}"),
            }
        }
        assert!(checked > 10);
    }
}
