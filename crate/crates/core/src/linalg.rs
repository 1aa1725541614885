//! Small dense linear-algebra helpers shared across modules.
//!
//! Everything here is a thin wrapper over LAPACK (through `ndarray-linalg`)
//! plus a few hand-rolled routines where determinism or structure matters.

use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{Eigh, UPLO};

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn sym_eig(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    a.eigh(UPLO::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigendecomposition failed: {e}")))
}

/// Spectral decomposition of a symmetric matrix with eigenvalues mapped
/// through `f`: returns `U diag(f(lambda)) U^T`.
pub fn sym_map(a: &Array2<f64>, f: impl Fn(f64) -> f64) -> Result<Array2<f64>> {
    let (vals, vecs) = sym_eig(a)?;
    let mapped = vals.mapv(f);
    Ok(scaled_outer(&vecs.view(), &mapped.view()))
}

/// `U diag(s) U^T` without forming the diagonal matrix.
pub fn scaled_outer(u: &ArrayView2<f64>, s: &ArrayView1<f64>) -> Array2<f64> {
    let us = u * s; // broadcasts s over columns
    us.dot(&u.t())
}

/// Operator (spectral) norm of a symmetric matrix.
pub fn sym_op_norm(a: &Array2<f64>) -> Result<f64> {
    let (vals, _) = sym_eig(a)?;
    Ok(vals.iter().fold(0.0f64, |m, &v| m.max(v.abs())))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eig(a: &Array2<f64>) -> Result<f64> {
    let (vals, _) = sym_eig(a)?;
    Ok(vals[0])
}

/// Frobenius norm.
pub fn fro_norm(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Pairwise (tree) summation of a slice. Used where sums are accumulated by
/// hand so results do not depend on chunking of the work.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (lo, hi) = xs.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

/// Mean via pairwise summation.
pub fn pairwise_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() { 0.0 } else { pairwise_sum(xs) / xs.len() as f64 }
}

/// Residual-checked symmetric positive-definite solve of `a x = b` for many
/// right-hand sides, by Cholesky. Reports the smallest eigenvalue when the
/// factorization fails.
pub fn spd_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    use ndarray_linalg::{CholeskyFactorized, FactorizeC, SolveC, UPLO as CUPLO};
    let f: CholeskyFactorized<_> = match a.factorizec(CUPLO::Lower) {
        Ok(f) => f,
        Err(_) => {
            let min = sym_min_eig(a)?;
            return Err(Error::Numerical(format!(
                "Cholesky factorization failed; smallest eigenvalue = {min:.3e}"
            )));
        }
    };
    f.solvec(b)
        .map_err(|e| Error::Numerical(format!("triangular solve failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn sym_map_inverse_sqrt_identity() {
        let a = array![[4.0, 0.0], [0.0, 9.0]];
        let inv_sqrt = sym_map(&a, |l| 1.0 / l.sqrt()).unwrap();
        let id = inv_sqrt.dot(&a).dot(&inv_sqrt);
        assert_abs_diff_eq!(id[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id[[1, 1]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id[[0, 1]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_benign_input() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert_abs_diff_eq!(pairwise_sum(&xs), naive, epsilon = 1e-9);
    }

    #[test]
    fn spd_solve_small_system() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let b = array![3.0, 3.0];
        let x = spd_solve(&a, &b).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let a = array![[1.0, 0.0], [0.0, -1.0]];
        let b = array![1.0, 1.0];
        assert!(spd_solve(&a, &b).is_err());
    }
}
