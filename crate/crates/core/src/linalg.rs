//! Small complex linear-algebra helpers shared by the propagators.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

pub fn real_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|c| c.re)
}

pub fn imag_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|c| c.im)
}

/// Eigenvalues of a complex square matrix (diagonal of its Schur form).
pub fn eigenvalues(m: &CMatrix) -> Vec<Complex64> {
    match m.nrows() {
        0 => Vec::new(),
        1 => vec![m[(0, 0)]],
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let disc = (tr * tr * 0.25 - det).sqrt();
            vec![tr * 0.5 + disc, tr * 0.5 - disc]
        }
        _ => {
            let t = nalgebra::Schur::new(m.clone()).unpack().1;
            (0..t.nrows()).map(|i| t[(i, i)]).collect()
        }
    }
}

pub fn determinant(m: &CMatrix) -> Complex64 {
    match m.nrows() {
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => m.clone().lu().determinant(),
    }
}

/// `det^{1/2}` as the product of principal square roots of the eigenvalues.
/// Well defined without tracking when the spectrum avoids the negative axis.
pub fn sqrt_det_principal(m: &CMatrix) -> Complex64 {
    eigenvalues(m).into_iter().map(|l| l.sqrt()).product()
}

/// Inverse with a condition-number guard; `context` labels the error.
pub fn inverse_checked(m: &CMatrix, max_condition: f64, context: &str) -> Result<CMatrix> {
    let inv = m.clone().try_inverse().ok_or_else(|| Error::NearSingular {
        condition: f64::INFINITY,
        context: context.to_string(),
    })?;
    let condition = m.norm() * inv.norm();
    if !condition.is_finite() || condition > max_condition {
        return Err(Error::NearSingular { condition, context: context.to_string() });
    }
    Ok(inv)
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    nalgebra::SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn three_by_three_determinant_matches_eigenvalue_product() {
        let m = CMatrix::from_row_slice(
            3,
            3,
            &[c(2.0, 1.0), c(0.3, 0.0), c(0.0, -0.2), c(0.1, 0.1), c(1.0, 0.5), c(0.2, 0.0), c(0.0, 0.0), c(0.4, -0.1), c(3.0, 2.0)],
        );
        let prod: Complex64 = eigenvalues(&m).into_iter().product();
        assert!((prod - determinant(&m)).norm() < 1e-12);
        let s = sqrt_det_principal(&m);
        assert!((s * s - determinant(&m)).norm() < 1e-12);
    }

    #[test]
    fn inverse_guard_rejects_singular() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        assert!(inverse_checked(&m, 1e12, "test").is_err());
        let id = CMatrix::identity(2, 2);
        assert_eq!(inverse_checked(&id, 1e12, "test").unwrap(), id);
    }
}
