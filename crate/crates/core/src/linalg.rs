//! Small dense-matrix helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

/// `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = symmetrize(m).symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// PSD test with the solver round-off tolerance `min eig >= -1e-8 * (1 + trace)`.
pub fn is_psd(m: &DMatrix<f64>, scale_tol: f64) -> bool {
    let tr = m.trace();
    min_eigenvalue(m) >= -scale_tol * (1.0 + tr.abs())
}

/// log det of a symmetric positive-definite matrix via Cholesky.
///
/// Returns `None` when the matrix is not numerically positive definite.
pub fn logdet_pd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = symmetrize(m).cholesky()?;
    let mut acc = 0.0;
    let l = chol.l();
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

/// Symmetric PSD square root with eigenvalue clamping at zero.
///
/// Solver outputs can carry tiny negative eigenvalues; those are clamped so
/// the square root always exists.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let vals: DVector<f64> = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (j, col) in eig.eigenvectors.column_iter().enumerate() {
        let s = vals[j];
        if s > 0.0 {
            out += (col * col.transpose()) * (s);
        }
    }
    out
}

/// Project a symmetric matrix onto the PSD cone (eigenvalue clamping).
pub fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (j, col) in eig.eigenvectors.column_iter().enumerate() {
        let v = eig.eigenvalues[j];
        if v > 0.0 {
            out += (col * col.transpose()) * v;
        }
    }
    out
}

/// Solve `m x = b` for symmetric positive-definite `m`.
pub fn solve_pd(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    symmetrize(m).cholesky().map(|c| c.solve(b))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn inverse_pd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    symmetrize(m).cholesky().map(|c| c.inverse())
}
