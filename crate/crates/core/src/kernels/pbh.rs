use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{eigenvalues, ensure_square, rank_threshold, Mat};
use crate::error::{Error, Result};

/// Eigenvalues with `Re >= -MARGINAL_BAND` are treated as not strictly stable.
pub const MARGINAL_BAND: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PbhReport {
    pub ok: bool,
    /// First eigenvalue at which the rank test failed.
    pub failing_eigenvalue: Option<Complex64>,
}

fn complex_rank(m: &DMatrix<Complex64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return 0;
    }
    let tol = rank_threshold(m.nrows(), m.ncols(), sigma_max);
    sv.iter().filter(|&&s| s > tol).count()
}

fn to_complex(m: &Mat) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

fn unstable_eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    let mut eigs: Vec<Complex64> = eigenvalues(a)?.into_iter().filter(|l| l.re >= -MARGINAL_BAND).collect();
    eigs.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    Ok(eigs)
}

/// PBH: `[lambda I - A, B]` has full row rank at every eigenvalue with `Re >= 0`.
pub fn pbh_stabilizable(a: &Mat, b: &Mat) -> Result<PbhReport> {
    let n = ensure_square(a, "PBH state matrix")?;
    if b.nrows() != n {
        return Err(Error::dim("PBH input matrix", format!("{n} rows"), b.nrows()));
    }
    let bc = to_complex(b);
    for lambda in unstable_eigenvalues(a)? {
        let shifted = DMatrix::<Complex64>::identity(n, n) * lambda - to_complex(a);
        let mut m = DMatrix::<Complex64>::zeros(n, n + b.ncols());
        m.view_mut((0, 0), (n, n)).copy_from(&shifted);
        m.view_mut((0, n), bc.shape()).copy_from(&bc);
        if complex_rank(&m) < n {
            return Ok(PbhReport {
                ok: false,
                failing_eigenvalue: Some(lambda),
            });
        }
    }
    Ok(PbhReport {
        ok: true,
        failing_eigenvalue: None,
    })
}

/// PBH: `[A - lambda I; C]` has full column rank at every eigenvalue with `Re >= 0`.
pub fn pbh_detectable(a: &Mat, c: &Mat) -> Result<PbhReport> {
    let n = ensure_square(a, "PBH state matrix")?;
    if c.ncols() != n {
        return Err(Error::dim("PBH output matrix", format!("{n} columns"), c.ncols()));
    }
    let cc = to_complex(c);
    for lambda in unstable_eigenvalues(a)? {
        let shifted = to_complex(a) - DMatrix::<Complex64>::identity(n, n) * lambda;
        let mut m = DMatrix::<Complex64>::zeros(n + c.nrows(), n);
        m.view_mut((0, 0), (n, n)).copy_from(&shifted);
        m.view_mut((n, 0), cc.shape()).copy_from(&cc);
        if complex_rank(&m) < n {
            return Ok(PbhReport {
                ok: false,
                failing_eigenvalue: Some(lambda),
            });
        }
    }
    Ok(PbhReport {
        ok: true,
        failing_eigenvalue: None,
    })
}
