//! Small dense helpers over `nalgebra` used by the filters: covariance
//! repair, SPD solves and condition checks.

use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance used for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("matrix is singular or not positive definite")]
    Singular,
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Matrix, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Projects a square matrix onto the symmetric matrices with eigenvalues at
/// least `1e-12 * max(1, trace)`.
///
/// Inputs that already clear the floor come back as their symmetric part
/// without an eigendecomposition, so the repair is exact on SPD inputs.
pub fn nearest_spd(m: &Matrix) -> Result<Matrix, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::DimensionMismatch {
            expected: (m.nrows(), m.nrows()),
            got: m.shape(),
        });
    }
    if !all_finite(m) {
        return Err(LinalgError::NonFinite);
    }
    let sym = symmetrize(m);
    let n = sym.nrows();
    if n == 0 {
        return Ok(sym);
    }
    let floor = 1e-12 * sym.trace().max(1.0);
    let mut shifted = sym.clone();
    for i in 0..n {
        shifted[(i, i)] -= floor;
    }
    if shifted.cholesky().is_some() {
        return Ok(sym);
    }
    let eig = sym.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| if v < floor { floor } else { v });
    let v = &eig.eigenvectors;
    let rebuilt = v * Matrix::from_diagonal(&clamped) * v.transpose();
    let out = symmetrize(&rebuilt);
    if !all_finite(&out) {
        return Err(LinalgError::NonFinite);
    }
    Ok(out)
}

/// `A · S⁻¹` for symmetric positive definite `S`, via Cholesky.
pub fn mrdiv_spd(a: &Matrix, s: &Matrix) -> Result<Matrix, LinalgError> {
    if s.nrows() != a.ncols() || !s.is_square() {
        return Err(LinalgError::DimensionMismatch {
            expected: (a.ncols(), a.ncols()),
            got: s.shape(),
        });
    }
    let chol = s.clone().cholesky().ok_or(LinalgError::Singular)?;
    Ok(chol.solve(&a.transpose()).transpose())
}

/// `A · S⁻¹`, trying Cholesky first and falling back to LU.
pub fn mrdiv(a: &Matrix, s: &Matrix) -> Result<Matrix, LinalgError> {
    match mrdiv_spd(a, s) {
        Ok(x) => Ok(x),
        Err(LinalgError::Singular) => {
            let lu = s.transpose().lu();
            lu.solve(&a.transpose())
                .map(|x| x.transpose())
                .ok_or(LinalgError::Singular)
        }
        Err(e) => Err(e),
    }
}

/// General inverse via LU with partial pivoting.
pub fn inverse(m: &Matrix) -> Result<Matrix, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::DimensionMismatch {
            expected: (m.nrows(), m.nrows()),
            got: m.shape(),
        });
    }
    m.clone().try_inverse().ok_or(LinalgError::Singular)
}

/// 2-norm condition number of a symmetric matrix, `+inf` when the smallest
/// eigenvalue magnitude is zero.
pub fn symmetric_condition(m: &Matrix) -> f64 {
    let eig = symmetrize(m).symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for v in eig.eigenvalues.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(*v))
}

/// Neumaier-compensated sum; used wherever Monte-Carlo reductions must stay
/// reproducible and accurate.
pub fn stable_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
