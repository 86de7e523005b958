//! Numerical primitives shared by the machine model and the filters:
//! triangularization, guarded Cholesky factorization, and finite-difference
//! Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// General triangularization: for a wide matrix `M` (rows ≤ columns) return
/// the lower-triangular `L` with `L·Lᵀ = M·Mᵀ`.
///
/// Computed as the transposed triangular factor of a QR decomposition of
/// `Mᵀ`; column signs are flipped so the diagonal is non-negative, which
/// makes the factor unique and comparisons in tests deterministic.
pub fn tria(m: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(
        m.nrows() <= m.ncols(),
        "tria expects rows <= columns, got {}x{}",
        m.nrows(),
        m.ncols()
    );
    let qr = m.transpose().qr();
    let mut l = qr.r().transpose();
    for j in 0..l.ncols() {
        if l[(j, j)] < 0.0 {
            for i in 0..l.nrows() {
                l[(i, j)] = -l[(i, j)];
            }
        }
    }
    l
}

/// Lower Cholesky factor of an SPD matrix, with a single jitter retry.
///
/// If the plain factorization fails, `1e-9·trace(P)/n` is added to the
/// diagonal once and the factorization retried; a second failure is a hard
/// [`Error::Numerical`]. The retry absorbs the tiny negative eigenvalues
/// covariance recursions accumulate in floating point without masking a
/// genuinely indefinite matrix.
pub fn chol_with_jitter(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    debug_assert_eq!(p.nrows(), p.ncols());
    if let Some(chol) = nalgebra::Cholesky::new(p.clone()) {
        return Ok(chol.l());
    }
    let n = p.nrows();
    let jitter = 1e-9 * p.trace() / n as f64;
    let jittered = p + DMatrix::from_diagonal_element(n, n, jitter);
    match nalgebra::Cholesky::new(jittered) {
        Some(chol) => {
            log::debug!("covariance needed {jitter:.3e} diagonal jitter to factor");
            Ok(chol.l())
        }
        None => Err(Error::numerical(format!(
            "covariance not positive definite even after {jitter:.3e} jitter (trace {:.3e})",
            p.trace()
        ))),
    }
}

/// Lower square-root factor of a positive *semi*-definite covariance:
/// Cholesky when SPD, element-wise square root when the matrix is diagonal
/// with non-negative entries (covers the exactly-zero covariance of
/// noise-free runs).
pub fn psd_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::config(format!(
            "covariance must be square, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let scale = cov.amax().max(1.0);
    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::config("covariance must be symmetric".to_string()));
    }
    if let Some(chol) = nalgebra::Cholesky::new(cov.clone()) {
        return Ok(chol.l());
    }
    let n = cov.nrows();
    let diagonal_only = (0..n).all(|i| (0..n).all(|j| i == j || cov[(i, j)] == 0.0));
    if diagonal_only && (0..n).all(|i| cov[(i, i)] >= 0.0) {
        return Ok(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                cov[(i, i)].sqrt()
            } else {
                0.0
            }
        }));
    }
    Err(Error::config(
        "covariance is not positive semi-definite".to_string(),
    ))
}

/// Inverse of an SPD matrix via Cholesky; [`Error::Singular`] when the
/// factorization fails.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(m.clone())
        .map(|chol| chol.inverse())
        .ok_or_else(|| Error::singular(format!("{what} is not invertible")))
}

/// Solve `X·L·Lᵀ = B` for `X` given a lower-triangular `L`, using two
/// triangular solves (no explicit inverse).
pub fn solve_right_lower_sq(b: &DMatrix<f64>, l: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    // A·Lᵀ = B  ⇔  L·Aᵀ = Bᵀ
    let a_t = l
        .solve_lower_triangular(&b.transpose())
        .ok_or_else(|| Error::singular(format!("{what} has a zero diagonal entry")))?;
    // X·L = A  ⇔  Lᵀ·Xᵀ = Aᵀ, and A = a_tᵀ so Aᵀ = a_t.
    let x_t = l
        .transpose()
        .solve_upper_triangular(&a_t)
        .ok_or_else(|| Error::singular(format!("{what} has a zero diagonal entry")))?;
    Ok(x_t.transpose())
}

/// Central finite-difference Jacobian of `func` at `x`, with per-component
/// step `1e-6·max(1, |x_i|)`.
pub fn jacobian_fd(
    func: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    out_dim: usize,
) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(out_dim, n);
    for i in 0..n {
        let step = 1e-6 * x[i].abs().max(1.0);
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[i] += step;
        lo[i] -= step;
        let diff = (func(&hi) - func(&lo)) / (2.0 * step);
        jac.set_column(i, &diff);
    }
    jac
}
