//! Small dense linear-algebra helpers shared by the filter and network code.

use nalgebra::{DMatrix, DVector, SVD};

use crate::{Error, Result, Scalar};

/// `(M + Mᵀ)/2`.
pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::from_f64_lit(0.5);
    (m + m.transpose()) * half
}

/// Moore-Penrose pseudo-inverse via SVD.
///
/// Returns the pseudo-inverse together with a flag that is `true` when the
/// matrix is rank-deficient (numerical rank below `min(nrows, ncols)`).
/// Callers that require full row rank surface the flag as a warning and keep
/// the least-squares result.
pub fn pseudo_inverse<T: Scalar>(m: &DMatrix<T>) -> Result<(DMatrix<T>, bool)> {
    let (nrows, ncols) = m.shape();
    let svd = SVD::new(m.clone(), true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(T::zero(), |a, b| a.max(b));
    let tol = max_sv
        * T::from_usize(nrows.max(ncols)).expect("dimension fits scalar")
        * T::default_epsilon();
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|_| Error::SingularMatrix("pseudo-inverse of an unset SVD"))?;
    Ok((pinv, rank < nrows.min(ncols)))
}

/// Operator (spectral) norm: the largest singular value.
pub fn operator_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    let svd = SVD::new(m.clone(), false, false);
    svd.singular_values.iter().cloned().fold(T::zero(), |a, b| a.max(b))
}

/// Symmetric square root of a positive-semidefinite matrix.
///
/// Tries Cholesky first; for semidefinite inputs (e.g. a zero process-noise
/// covariance) falls back to an eigendecomposition with negative eigenvalues
/// clamped to zero.
pub fn psd_sqrt<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if m.iter().all(|x| *x == T::zero()) {
        return Ok(m.clone());
    }
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = symmetrize(m).symmetric_eigen();
    let tol = -T::from_f64_lit(1e-9);
    if eig.eigenvalues.iter().any(|&l| l < tol) {
        return Err(Error::Domain(
            "matrix is not positive semidefinite".to_string(),
        ));
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(T::zero()).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}

/// Project a symmetric matrix onto the PSD cone by clamping negative
/// eigenvalues to zero.
pub fn clip_psd<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = symmetrize(m).symmetric_eigen();
    let clipped = eig.eigenvalues.map(|l| l.max(T::zero()));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    let eig = symmetrize(m).symmetric_eigen();
    let mut values = eig.eigenvalues.iter();
    let first = *values.next().expect("nonempty matrix");
    values.fold(first, |a, &b| a.min(b))
}

/// Central-difference Jacobian of a vector field, step `h` per component.
pub fn finite_difference_jacobian<T, F>(f: F, x: &DVector<T>, out_dim: usize, h: T) -> DMatrix<T>
where
    T: Scalar,
    F: Fn(&DVector<T>) -> DVector<T>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(out_dim, n);
    let two_h = h + h;
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let df = (f(&xp) - f(&xm)) / two_h;
        jac.set_column(j, &df);
    }
    jac
}

/// Relative difference `‖A − B‖ / (1 + ‖A‖)` in the Frobenius norm.
pub fn relative_matrix_error<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    (a - b).norm() / (T::one() + a.norm())
}
