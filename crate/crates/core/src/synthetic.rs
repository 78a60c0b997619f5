//! Gaussian test data with a prescribed sparse precision matrix.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Undirected tree over 10 variables used for the ρ-sweep stability check.
pub const STABILITY_GRAPH: [(usize, usize); 9] =
    [(0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (2, 7), (7, 8), (4, 9)];

/// Unit-diagonal precision with `weight` on every listed edge.
pub fn precision_from_edges(p: usize, edges: &[(usize, usize)], weight: f64) -> Array2<f64> {
    let mut omega = Array2::eye(p);
    for &(i, j) in edges {
        omega[[i, j]] = weight;
        omega[[j, i]] = weight;
    }
    omega
}

/// The precision used by the stability experiment.
pub fn stability_precision() -> Array2<f64> {
    precision_from_edges(10, &STABILITY_GRAPH, 0.4)
}

/// `n` draws from `N(0, Ω⁻¹)`.
pub fn sample_gaussian(precision: &Array2<f64>, n: usize, seed: u64) -> Result<Array2<f64>> {
    let p = precision.nrows();
    let omega = DMatrix::from_fn(p, p, |i, j| precision[[i, j]]);
    let sigma = omega
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("precision matrix is not positive definite".into()))?
        .inverse();
    let l = sigma
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("covariance is not positive definite".into()))?
        .l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, p));
    let mut z = vec![0.0; p];
    for r in 0..n {
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        for i in 0..p {
            out[[r, i]] = (0..=i).map(|k| l[(i, k)] * z[k]).sum();
        }
    }
    Ok(out)
}

/// Correlation-matrix view of the true precision, for comparing against an
/// estimate made from z-scored data: `D Ω D` with `D = diag(sqrt(Σ_ii))`.
pub fn standardized_precision(precision: &Array2<f64>) -> Result<Array2<f64>> {
    let p = precision.nrows();
    let omega = DMatrix::from_fn(p, p, |i, j| precision[[i, j]]);
    let sigma = omega
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("precision matrix is not positive definite".into()))?
        .inverse();
    Ok(Array2::from_shape_fn((p, p), |(i, j)| {
        precision[[i, j]] * sigma[(i, i)].sqrt() * sigma[(j, j)].sqrt()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stability_precision_is_positive_definite() {
        let omega = stability_precision();
        let m = DMatrix::from_fn(10, 10, |i, j| omega[[i, j]]);
        assert!(m.symmetric_eigen().eigenvalues.iter().all(|e| *e > 0.05));
    }

    #[test]
    fn samples_have_requested_covariance() {
        let omega = precision_from_edges(3, &[(0, 1)], 0.5);
        let x = sample_gaussian(&omega, 40_000, 1).unwrap();
        let cov = x.t().dot(&x) / 40_000.0;
        // Σ = inverse of [[1, .5, 0], [.5, 1, 0], [0, 0, 1]].
        let want = [[4.0 / 3.0, -2.0 / 3.0, 0.0], [-2.0 / 3.0, 4.0 / 3.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((cov[[i, j]] - want[i][j]).abs() < 0.05, "{i},{j}: {}", cov[[i, j]]);
            }
        }
    }
}
