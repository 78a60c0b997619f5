use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::dataset::{sample_covariance, zscore, DesignMatrix};
use crate::lp::reference_lp_min_l1;
use crate::synthetic::{precision_from_edges, sample_gaussian};

fn tight() -> AdmmParams {
    AdmmParams { tol_abs: 1e-9, tol_rel: 1e-8, max_iter: 200_000, ..Default::default() }
}

/// Covariance view of z-scored correlated Gaussian data.
fn random_cov(p: usize, n: usize, seed: u64) -> CovarianceView {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = Array2::from_shape_fn((p, p), |(i, j)| {
        if i == j {
            1.0
        } else if rng.random_bool(0.3) {
            rng.random_range(-0.6..0.6)
        } else {
            0.0
        }
    });
    let z = Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut rng));
    let x = z.dot(&mix);
    let (xs, _) = zscore(&DesignMatrix::new(x, p, 1).unwrap()).unwrap();
    sample_covariance(&xs).unwrap()
}

fn identity_cov(p: usize, n: usize) -> CovarianceView {
    CovarianceView::from_covariance(Array2::eye(p), n).unwrap()
}

fn l1(v: ndarray::ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// `min ‖b‖₁ s.t. ‖Ĉ b - e_j‖∞ <= λ` through the reference LP.
fn oracle_stage2(chat: &Array2<f64>, j: usize, lambda: f64) -> Array1<f64> {
    let p = chat.nrows();
    let mut a = Array2::zeros((2 * p, p));
    let mut b = Array1::zeros(2 * p);
    for i in 0..p {
        let e = if i == j { 1.0 } else { 0.0 };
        for c in 0..p {
            a[[i, c]] = chat[[i, c]];
            a[[p + i, c]] = -chat[[i, c]];
        }
        b[i] = e + lambda;
        b[p + i] = lambda - e;
    }
    reference_lp_min_l1(a.view(), b.view(), None).unwrap()
}

/// `min ‖b‖₁ s.t. |Ĉ b - e_j| <= τ b_j, b_j >= 0` through the reference LP.
fn oracle_stage1(chat: &Array2<f64>, j: usize, tau: f64) -> Array1<f64> {
    let a = ops::stage1_dense_operator(chat.view(), tau, j);
    let p = chat.nrows();
    let mut b = Array1::zeros(2 * p);
    b[j] = 1.0;
    b[p + j] = -1.0;
    reference_lp_min_l1(a.view(), b.view(), Some(j)).unwrap()
}

#[test]
fn symmetrize_examples() {
    let out = symmetrize(array![[1.0, 0.5], [-0.2, 1.0]].view()).unwrap();
    assert_eq!(out, array![[1.0, -0.2], [-0.2, 1.0]]);
    let sym = array![[2.0, 0.3, 0.1], [0.3, 2.0, -0.4], [0.1, -0.4, 2.0]];
    assert_eq!(symmetrize(sym.view()).unwrap(), sym);
    let out = symmetrize(array![[1.0, 0.3], [0.0, 1.0]].view()).unwrap();
    assert_eq!(out[[0, 1]], 0.0);
    assert_eq!(out[[1, 0]], 0.0);
    // Equal magnitudes keep the upper entry.
    let out = symmetrize(array![[1.0, 0.3], [-0.3, 1.0]].view()).unwrap();
    assert_eq!((out[[0, 1]], out[[1, 0]]), (0.3, 0.3));
    assert!(symmetrize(Array2::<f64>::zeros((2, 3)).view()).is_err());
}

#[test]
fn correct_diagonal_examples() {
    let z = correct_diagonal(&array![3.0, 7.0], &array![1.0, 1.0], 8000, 5200);
    assert_eq!(z, array![3.0, 7.0]);
    // sqrt(ln 1000 / 100), ln 1000 = 6.907755278982137
    let got = correct_diagonal(&array![5.0], &array![1e6], 1000, 100);
    assert!((got[0] - (6.907_755_278_982_137_f64 / 100.0).sqrt()).abs() < 1e-15);
    assert!((got[0] - 0.262_826).abs() < 1e-6);
}

#[test]
fn stage1_on_identity() {
    let n = 50;
    let cov = identity_cov(4, n);
    let ws = Workspace::new(&cov).unwrap();
    let tau = 0.1;
    let s1 = stage1_solve(&ws, tau, &tight(), 4).unwrap();
    assert!(s1.report.all_converged());
    // |Ĉ_jj b - 1| <= τ b binds from below: b = 1 / (Ĉ_jj + τ).
    let want = 1.0 / (1.0 + 1.0 / n as f64 + tau);
    for j in 0..4 {
        assert!((s1.omega1[[j, j]] - want).abs() < 1e-6, "{}", s1.omega1[[j, j]]);
        for i in 0..4 {
            if i != j {
                assert!(s1.omega1[[i, j]].abs() < 1e-9);
            }
        }
    }
}

#[test]
fn stage2_on_identity() {
    let n = 40;
    let cov = identity_cov(5, n);
    let ws = Workspace::new(&cov).unwrap();
    let lambdas = array![0.5, 0.3, 0.2, 0.5, 0.9];
    let (omega, report) = stage2_solve(&ws, &lambdas, &tight(), 2).unwrap();
    assert!(report.all_converged());
    let chat_jj = 1.0 + 1.0 / n as f64;
    for j in 0..5 {
        assert!((omega[[j, j]] - (1.0 - lambdas[j]) / chat_jj).abs() < 1e-6);
        let o = oracle_stage2(&ws.chat, j, lambdas[j]);
        assert!((omega[[j, j]] - o[j]).abs() < 1e-6);
    }
}

#[test]
fn large_threshold_gives_zero() {
    let cov = random_cov(6, 300, 2);
    let ws = Workspace::new(&cov).unwrap();
    let (omega, _) = stage2_solve(&ws, &Array1::from_elem(6, 1.0), &AdmmParams::default(), 3).unwrap();
    assert!(omega.iter().all(|v| *v == 0.0));
    let clime = clime_estimate(&cov, 1.5, &EstimatorOptions::default()).unwrap();
    assert!(clime.omega_hat.iter().all(|v| *v == 0.0));
}

#[test]
fn clime_on_identity() {
    let n = 1000;
    let cov = identity_cov(4, n);
    let est = clime_estimate(&cov, 0.3, &EstimatorOptions { stage2: tight(), ..Default::default() }).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j { 0.7 / (1.0 + 1.0 / n as f64) } else { 0.0 };
            assert!((est.omega_hat[[i, j]] - want).abs() < 1e-6);
            assert!((est.omega_hat[[i, j]] - if i == j { 0.7 } else { 0.0 }).abs() <= 1.0 / n as f64);
        }
    }
}

#[test]
fn matches_reference_lp() {
    for (seed, p) in [(1_u64, 5_usize), (2, 6), (3, 8)] {
        let cov = random_cov(p, 500, seed);
        let ws = Workspace::new(&cov).unwrap();
        let tau = crate::dataset::tau(2.0, p, 500);
        let s1 = stage1_solve(&ws, tau, &tight(), 3).unwrap();
        let lambdas = Array1::from_shape_fn(p, |j| 0.1 + 0.02 * j as f64);
        let (s2, _) = stage2_solve(&ws, &lambdas, &tight(), p).unwrap();
        for j in 0..p {
            let o1 = oracle_stage1(&ws.chat, j, tau);
            let gap1 = (l1(s1.omega1.column(j)) - l1(o1.view())).abs();
            assert!(gap1 < 1e-4, "stage 1 seed {seed} column {j}: gap {gap1}");
            let o2 = oracle_stage2(&ws.chat, j, lambdas[j]);
            let gap2 = (l1(s2.column(j)) - l1(o2.view())).abs();
            assert!(gap2 < 1e-4, "stage 2 seed {seed} column {j}: gap {gap2}");
        }
    }
}

#[test]
fn block_size_does_not_change_columns() {
    let cov = random_cov(20, 400, 9);
    let ws = Workspace::new(&cov).unwrap();
    let tau = crate::dataset::tau(2.0, 20, 400);
    let params = AdmmParams::default();
    let one = stage1_solve(&ws, tau, &params, 1).unwrap();
    let five = stage1_solve(&ws, tau, &params, 5).unwrap();
    let diff = (&one.omega1 - &five.omega1).mapv(f64::abs).fold(0.0_f64, |m, v| m.max(*v));
    assert!(diff <= 1e-6, "max difference {diff}");
    assert_eq!(one.report.iterations, five.report.iterations);
}

#[test]
fn two_variable_gaussian() {
    let rho = 0.6;
    // Precision of the correlation matrix [[1, ρ], [ρ, 1]].
    let omega = array![[1.0, -rho], [-rho, 1.0]] / (1.0 - rho * rho);
    let x = sample_gaussian(&omega, 10_000, 4).unwrap();
    let (xs, _) = zscore(&DesignMatrix::new(x, 2, 1).unwrap()).unwrap();
    let est = aclime_estimate(&xs, 2.0, &EstimatorOptions::default()).unwrap();
    let want = array![[1.0, -0.6], [-0.6, 1.0]] / 0.64;
    for (g, w) in est.omega_hat.iter().zip(want.iter()) {
        assert!((g - w).abs() < 0.1, "estimate {g} vs {w}");
    }
}

#[test]
fn independent_data_has_no_edges() {
    let omega = Array2::eye(20);
    let x = sample_gaussian(&omega, 2000, 21).unwrap();
    let (xs, _) = zscore(&DesignMatrix::new(x, 20, 1).unwrap()).unwrap();
    let est = aclime_estimate(&xs, 2.0, &EstimatorOptions::default()).unwrap();
    let edges = support(est.omega_hat.view(), ZERO_REL_TOL);
    assert!(edges.len() <= 2, "false edges: {edges:?}");
}

#[test]
fn symmetrized_estimate_keeps_smaller_entry() {
    let omega = precision_from_edges(6, &[(0, 1), (1, 2), (3, 4)], 0.4);
    let x = sample_gaussian(&omega, 800, 5).unwrap();
    let (xs, _) = zscore(&DesignMatrix::new(x, 6, 1).unwrap()).unwrap();
    let est = aclime_estimate(&xs, 2.0, &EstimatorOptions::with_rho(0.5)).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            let h = est.omega_hat[[i, j]];
            assert_eq!(h, est.omega_hat[[j, i]]);
            let (a, b) = (est.omega_tilde[[i, j]], est.omega_tilde[[j, i]]);
            assert!(h == a || h == b);
            assert!(h.abs() <= a.abs().min(b.abs()));
        }
    }
}

#[test]
fn unstandardized_input_is_rejected() {
    let cov = CovarianceView::from_covariance(array![[2.0, 0.1], [0.1, 1.0]], 100).unwrap();
    assert!(matches!(Workspace::new(&cov), Err(Error::NotStandardized { .. })));
}

#[test]
fn stage2_is_monotone_in_threshold() {
    let cov = random_cov(6, 300, 12);
    let ws = Workspace::new(&cov).unwrap();
    for j in 0..6 {
        let mut last = f64::INFINITY;
        for lambda in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let obj = l1(oracle_stage2(&ws.chat, j, lambda).view());
            assert!(obj <= last + 1e-9);
            last = obj;
        }
    }
}
