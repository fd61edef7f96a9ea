//! Small dense linear-algebra helpers shared by the posterior and the
//! environment.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Relative diagonal jitter used on the first escalation step.
pub const BASE_JITTER: f64 = 1e-10;
/// Number of times the jitter is doubled before giving up.
pub const MAX_JITTER_DOUBLINGS: usize = 8;

/// Cholesky factorization with relative diagonal jitter escalation.
///
/// The plain matrix is tried first. On failure `1e-10 * trace / n` is added
/// to the diagonal and doubled up to eight times.
pub fn jittered_cholesky(matrix: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok(chol);
    }
    let n = matrix.nrows().max(1);
    let mean_diag = (matrix.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = BASE_JITTER * mean_diag;
    for _ in 0..=MAX_JITTER_DOUBLINGS {
        let mut m = matrix.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(chol);
        }
        jitter *= 2.0;
    }
    Err(Error::Factorization {
        attempts: MAX_JITTER_DOUBLINGS + 1,
    })
}

/// Lower-triangular factor `L` with `L Lᵀ ≈ matrix`, tolerating exactly
/// singular positive semi-definite inputs (zero rows stay zero).
///
/// Used for sampling from degenerate Gaussians such as `v² K` with `v = 0`.
pub fn psd_sqrt(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if matrix.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(matrix.nrows(), matrix.ncols()));
    }
    Ok(jittered_cholesky(matrix)?.l())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_matrix_needs_jitter() {
        let m = DMatrix::from_element(2, 2, 1.0);
        let chol = jittered_cholesky(&m).unwrap();
        let l = chol.l();
        let back = &l * l.transpose();
        assert!((back[(0, 1)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            jittered_cholesky(&m),
            Err(Error::Factorization { .. })
        ));
    }

    #[test]
    fn zero_matrix_sqrt_is_zero() {
        let l = psd_sqrt(&DMatrix::zeros(3, 3)).unwrap();
        assert!(l.iter().all(|v| *v == 0.0));
    }
}
