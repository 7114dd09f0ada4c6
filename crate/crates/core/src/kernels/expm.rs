use super::{ensure_finite, ensure_square, Mat};
use crate::error::{Error, Result};

/// `e^{M t}` by scaling and squaring with a Padé approximant.
pub fn matrix_exponential(m: &Mat, t: f64) -> Result<Mat> {
    let n = ensure_square(m, "matrix exponential")?;
    ensure_finite(m, "matrix exponential")?;
    if !t.is_finite() {
        return Err(Error::Input(format!("exponential time {t} is not finite")));
    }
    if t == 0.0 {
        return Ok(Mat::identity(n, n));
    }
    let scaled = m * t;
    if !scaled.iter().all(|v| v.is_finite()) {
        return Err(Error::Overflow("matrix exponential"));
    }
    let e = scaled.exp();
    if e.iter().all(|v| v.is_finite()) {
        Ok(e)
    } else {
        Err(Error::Overflow("matrix exponential"))
    }
}
