//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factorisation with a single jitter retry: on failure the matrix
/// is re-tried with `1e-12 * trace / p` added to the diagonal, then the
/// caller's error is returned. No silent pseudo-inverse.
pub fn cholesky_with_jitter(
    a: &DMatrix<f64>,
    on_failure: impl FnOnce() -> Error,
) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(chol);
    }
    let p = a.nrows();
    let jitter = 1e-12 * a.trace() / p as f64;
    let mut jittered = a.clone();
    for i in 0..p {
        jittered[(i, i)] += jitter;
    }
    Cholesky::new(jittered).ok_or_else(on_failure)
}

/// Solves the symmetric positive-definite system `A X = B`.
pub fn solve_spd(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    on_failure: impl FnOnce() -> Error,
) -> Result<DMatrix<f64>> {
    Ok(cholesky_with_jitter(a, on_failure)?.solve(b))
}

/// Ordinary least squares via the normal equations; errors when `X^T X` is
/// singular even after jitter.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, on_failure: impl FnOnce() -> Error) -> Result<DVector<f64>> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let chol = cholesky_with_jitter(&xtx, on_failure)?;
    Ok(chol.solve(&xty))
}

/// Extracts the `rows x cols` submatrix of `a`.
pub fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = a.clone().symmetric_eigenvalues();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in eig.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    (min, max)
}

/// Enforces exact symmetry by averaging with the transpose.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
