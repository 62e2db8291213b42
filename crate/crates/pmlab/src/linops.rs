//! Dense symmetric PSD linear algebra: pseudoinverse, matrix square root,
//! positive-eigenvalue extrema, generalized eigenvalue bounds, and the
//! centering projection. Everything runs through a symmetric
//! eigendecomposition; problem sizes here are small (K <= ~64, N <= ~1000).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues below DEFAULT_RANK_TOL * lambda_max are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

fn symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    // Symmetrize first so eigenvector orthogonality is not spoiled by
    // asymmetric floating-point noise.
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

fn rank_threshold(eigenvalues: &DVector<f64>, tol: f64) -> f64 {
    let lambda_max = eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    tol * lambda_max
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix: eigenvalues below
/// tol * lambda_max are zeroed, the rest inverted.
pub fn pinv(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (vals, vecs) = symmetric_eigen(a);
    let cut = rank_threshold(&vals, tol);
    let inv = DMatrix::from_diagonal(&vals.map(|l| if l > cut { 1.0 / l } else { 0.0 }));
    &vecs * inv * vecs.transpose()
}

/// Symmetric PSD square root; tiny negative eigenvalues are clamped to zero.
pub fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = symmetric_eigen(a);
    let root = DMatrix::from_diagonal(&vals.map(|l| l.max(0.0).sqrt()));
    &vecs * root * vecs.transpose()
}

/// Smallest and largest strictly positive eigenvalue (threshold
/// tol * lambda_max). Errors with ZeroMatrix if none remain.
pub fn pos_eig_range(a: &DMatrix<f64>, tol: f64) -> Result<(f64, f64)> {
    let (vals, _) = symmetric_eigen(a);
    let cut = rank_threshold(&vals, tol);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in vals.iter() {
        if l > cut && l > 0.0 {
            lo = lo.min(l);
            hi = hi.max(l);
        }
    }
    if lo.is_finite() {
        Ok((lo, hi))
    } else {
        Err(Error::ZeroMatrix)
    }
}

/// The centering projection I_N - 1 1^T / N.
pub fn centering_projection(n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::identity(n, n);
    let inv = 1.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            p[(i, j)] -= inv;
        }
    }
    p
}

/// Extrema of the generalized Rayleigh quotient x^T A x / x^T B x over
/// range(B), computed as the positive-eigenvalue extrema of
/// (B^{1/2})^+ A (B^{1/2})^+.
pub fn restricted_spectrum(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<(f64, f64)> {
    let root_pinv = pinv(&sqrt_psd(b), tol);
    if root_pinv.amax() == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let middle = &root_pinv * a * &root_pinv;
    pos_eig_range(&middle, tol)
}
