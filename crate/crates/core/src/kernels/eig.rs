use nalgebra::Schur;
use num_complex::Complex64;

use super::{ensure_finite, ensure_square, Mat};
use crate::error::{Error, Result};

const DEFLATION_TOL: f64 = 1e-12;
const MAX_QR_SWEEPS: usize = 10_000;

/// Eigenvalues via Hessenberg reduction and shifted QR sweeps (real Schur form).
pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex64>> {
    ensure_square(m, "eigenvalue input")?;
    ensure_finite(m, "eigenvalue input")?;
    let schur = Schur::try_new(m.clone(), DEFLATION_TOL, MAX_QR_SWEEPS).ok_or(Error::Numerical {
        what: "Schur QR iteration",
        iterations: MAX_QR_SWEEPS,
    })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// `max_i Re(lambda_i(m))`.
pub fn spectral_abscissa(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_hurwitz(m: &Mat) -> Result<bool> {
    Ok(spectral_abscissa(m)? < 0.0)
}
