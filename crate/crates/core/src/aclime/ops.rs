//! Linear operators of the column-block formulation.
//!
//! Stage 1 stacks the two one-sided constraints of every column `j` into
//!
//! ```text
//! A_j b = [Ĉ; -Ĉ] b - τ b_j 1_{2p}
//! ```
//!
//! so for a block `X` holding columns `start..start+k`
//!
//! ```text
//! A X   = [Ĉ; -Ĉ] X - τ 1_{2p×k} X_diag
//! Aᵀ Y  = Ĉ (Y₁ - Y₂) - τ W_diag,   W_diag[start+m, m] = 1ᵀY₁[:, m] + 1ᵀY₂[:, m]
//! ```
//!
//! Because `[Ĉ; -Ĉ]ᵀ 1_{2p} = 0`, `A_jᵀ A_j = 2Ĉ² + 2pτ² e_j e_jᵀ`, which gives
//! both the exact operator norm used to pick `η` and a cheap dual residual.
//!
//! All block matrices are stored column-major so each column is a contiguous
//! slice; every product skips zero entries of its right-hand side, so the cost
//! follows the sparsity of the iterates rather than `p²`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis, ShapeBuilder, Zip};

/// Column-major `rows x cols` zero matrix.
pub fn zeros_f(rows: usize, cols: usize) -> Array2<f64> {
    Array2::zeros((rows, cols).f())
}

/// `out += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// Row `i` of a row-major symmetric matrix, which equals its column `i`.
#[inline]
pub fn sym_col<'a>(m: ArrayView2<'a, f64>, i: usize) -> &'a [f64] {
    m.index_axis_move(Axis(0), i)
        .to_slice()
        .expect("symmetric operand must be row-major contiguous")
}

/// `out += M v` for symmetric row-major `M`, skipping zero entries of `v`.
#[inline]
pub fn sym_mul_add(m: ArrayView2<f64>, v: &[f64], out: &mut [f64]) {
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            axpy(vi, sym_col(m, i), out);
        }
    }
}

/// `out += M (v1 - v2)` without forming the difference.
#[inline]
pub fn sym_mul_add_diff(m: ArrayView2<f64>, v1: &[f64], v2: &[f64], out: &mut [f64]) {
    for (i, (&a, &b)) in v1.iter().zip(v2).enumerate() {
        let d = a - b;
        if d != 0.0 {
            axpy(d, sym_col(m, i), out);
        }
    }
}

/// `Ĉ X` for a column-major block, column by column.
pub fn sym_times_block(m: ArrayView2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let (p, k) = x.dim();
    let mut out = zeros_f(p, k);
    for c in 0..k {
        let col = x.column(c);
        let col = col.to_vec();
        sym_mul_add(m, &col, out.column_mut(c).into_slice().unwrap());
    }
    out
}

/// Stage-1 `A X` for the block whose first global column is `start`.
pub fn stage1_apply_a(chat: ArrayView2<f64>, tau: f64, x: &Array2<f64>, start: usize) -> Array2<f64> {
    let (p, k) = x.dim();
    let cx = sym_times_block(chat, x);
    let mut out = zeros_f(2 * p, k);
    for m in 0..k {
        let xd = x[[start + m, m]];
        for i in 0..p {
            out[[i, m]] = cx[[i, m]] - tau * xd;
            out[[p + i, m]] = -cx[[i, m]] - tau * xd;
        }
    }
    out
}

/// Stage-1 `Aᵀ Y` for the block whose first global column is `start`.
pub fn stage1_apply_at(chat: ArrayView2<f64>, tau: f64, y: &Array2<f64>, start: usize) -> Array2<f64> {
    let (two_p, k) = y.dim();
    let p = two_p / 2;
    let mut out = zeros_f(p, k);
    for m in 0..k {
        let col = y.column(m).to_vec();
        let (y1, y2) = col.split_at(p);
        let dst = out.column_mut(m).into_slice().unwrap();
        sym_mul_add_diff(chat, y1, y2, dst);
        let w: f64 = col.iter().sum();
        dst[start + m] -= tau * w;
    }
    out
}

/// Explicit `2p x p` matrix `A_j = [Ĉ - τ 1 e_jᵀ; -Ĉ - τ 1 e_jᵀ]`.
pub fn stage1_dense_operator(chat: ArrayView2<f64>, tau: f64, j: usize) -> Array2<f64> {
    let p = chat.nrows();
    let mut a = Array2::zeros((2 * p, p));
    for i in 0..p {
        for c in 0..p {
            a[[i, c]] = chat[[i, c]];
            a[[p + i, c]] = -chat[[i, c]];
        }
        a[[i, j]] -= tau;
        a[[p + i, j]] -= tau;
    }
    a
}

/// `Ĉ = L Lᵀ + I/n` with `L` from a rank-revealing pivoted Cholesky of `C`.
///
/// Lagged impulse responses of a linear scheme have a covariance of rank at
/// most the number of locations, so `r` is usually far below `p` and every
/// product with `Ĉ` becomes two thin matrix products.
#[derive(Debug, Clone)]
pub struct LowRank {
    /// `p x r`, row-major.
    pub l: Array2<f64>,
    /// `Lᵀ L`, `r x r`.
    pub gram: Array2<f64>,
    pub inv_n: f64,
}

/// Pivots whose remaining variance falls below this fraction of the largest
/// diagonal entry end the factorization.
pub const PIVOT_TOL: f64 = 1e-12;

impl LowRank {
    pub fn new(c: ArrayView2<f64>, n: usize) -> Self {
        let l = pivoted_cholesky(c, PIVOT_TOL);
        let gram = l.t().dot(&l);
        LowRank { l, gram, inv_n: 1.0 / n as f64 }
    }

    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    pub fn p(&self) -> usize {
        self.l.nrows()
    }

    /// `w = Lᵀ x`.
    pub fn project(&self, x: &Array2<f64>, w: &mut Array2<f64>) {
        general_mat_mul(1.0, &self.l.t(), x, 0.0, w);
    }

    /// `out = L w + x / n`, i.e. `Ĉ x` when `w = Lᵀ x`.
    pub fn expand(&self, w: &Array2<f64>, x: &Array2<f64>, out: &mut Array2<f64>) {
        Zip::from(&mut *out).and(x).for_each(|o, &v| *o = v * self.inv_n);
        general_mat_mul(1.0, &self.l, w, 1.0, out);
    }

    /// Dense `Ĉ`.
    pub fn dense(&self) -> Array2<f64> {
        let mut c = self.l.dot(&self.l.t());
        c.diag_mut().mapv_inplace(|v| v + self.inv_n);
        c
    }
}

/// `C ≈ L Lᵀ` with diagonal pivoting; stops once every remaining pivot is
/// below `rel_tol * max(diag C)`. Returns `L` with one column per pivot.
pub fn pivoted_cholesky(c: ArrayView2<f64>, rel_tol: f64) -> Array2<f64> {
    let p = c.nrows();
    let mut d: Vec<f64> = c.diag().to_vec();
    let cutoff = rel_tol * d.iter().fold(0.0_f64, |m, v| m.max(*v));
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut used = vec![false; p];
    loop {
        let mut piv = None;
        let mut best = cutoff;
        for (i, &v) in d.iter().enumerate() {
            if !used[i] && v > best {
                best = v;
                piv = Some(i);
            }
        }
        let Some(j) = piv else { break };
        let mut col: Vec<f64> = c.column(j).to_vec();
        for prev in &cols {
            let a = prev[j];
            if a != 0.0 {
                axpy(-a, prev, &mut col);
            }
        }
        let s = best.sqrt();
        col.iter_mut().for_each(|v| *v /= s);
        for (i, v) in col.iter_mut().enumerate() {
            if used[i] {
                *v = 0.0;
            }
        }
        col[j] = s;
        used[j] = true;
        for (di, v) in d.iter_mut().zip(&col) {
            *di -= v * v;
        }
        d[j] = 0.0;
        cols.push(col);
    }
    let r = cols.len();
    Array2::from_shape_fn((p, r), |(i, k)| cols[k][i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(p: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let a = Array2::from_shape_fn((p, p), |_| rng.random_range(-1.0..1.0));
        let s = a.t().dot(&a);
        s.as_standard_layout().to_owned()
    }

    fn to_f(m: &Array2<f64>) -> Array2<f64> {
        let mut out = zeros_f(m.nrows(), m.ncols());
        out.assign(m);
        out
    }

    #[test]
    fn block_a_matches_dense_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = 7;
        let chat = random_sym(p, &mut rng);
        let tau = 0.37;
        let start = 2;
        let k = 4;
        let x = to_f(&Array2::from_shape_fn((p, k), |_| rng.random_range(-1.0..1.0)));
        let y = to_f(&Array2::from_shape_fn((2 * p, k), |_| rng.random_range(0.0..1.0)));
        let ax = stage1_apply_a(chat.view(), tau, &x, start);
        let aty = stage1_apply_at(chat.view(), tau, &y, start);
        for m in 0..k {
            let dense = stage1_dense_operator(chat.view(), tau, start + m);
            let want_ax = dense.dot(&x.column(m));
            let want_aty = dense.t().dot(&y.column(m));
            for i in 0..2 * p {
                assert!((ax[[i, m]] - want_ax[i]).abs() < 1e-12);
            }
            for i in 0..p {
                assert!((aty[[i, m]] - want_aty[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pivoted_cholesky_reproduces_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = Array2::from_shape_fn((9, 3), |_| rng.random_range(-1.0..1.0));
        let c = f.dot(&f.t());
        let l = pivoted_cholesky(c.view(), PIVOT_TOL);
        assert_eq!(l.ncols(), 3);
        let diff = (&l.dot(&l.t()) - &c).mapv(f64::abs).fold(0.0_f64, |m, v| m.max(*v));
        assert!(diff < 1e-12, "{diff}");
        let full = random_sym(6, &mut rng);
        let lr = LowRank::new(full.view(), 40);
        assert_eq!(lr.rank(), 6);
        let mut want = full.clone();
        want.diag_mut().mapv_inplace(|v| v + 1.0 / 40.0);
        let diff = (&lr.dense() - &want).mapv(f64::abs).fold(0.0_f64, |m, v| m.max(*v));
        assert!(diff < 1e-12, "{diff}");
        let x = to_f(&Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0)));
        let mut w = zeros_f(6, 2);
        lr.project(&x, &mut w);
        let mut out = zeros_f(6, 2);
        lr.expand(&w, &x, &mut out);
        let diff = (&out - &want.dot(&x)).mapv(f64::abs).fold(0.0_f64, |m, v| m.max(*v));
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn normal_operator_has_rank_one_correction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = 6;
        let chat = random_sym(p, &mut rng);
        let tau = 0.2;
        let j = 4;
        let a = stage1_dense_operator(chat.view(), tau, j);
        let ata = a.t().dot(&a);
        let mut want = chat.dot(&chat) * 2.0;
        want[[j, j]] += 2.0 * p as f64 * tau * tau;
        for (u, v) in ata.iter().zip(want.iter()) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}
