use super::{
    eigenvalues, ensure_finite, ensure_square, ensure_symmetric, pbh_detectable, pbh_stabilizable, spectral_abscissa,
    sym_sqrt, symmetrize, Mat,
};
use crate::error::{Error, Result};
use crate::kernels::lyap::solve_hurwitz;

const MAX_NEWTON: usize = 200;

#[derive(Debug, Clone)]
pub struct CareSolution {
    /// Stabilizing solution `P`.
    pub p: Mat,
    /// Optimal gain `R^{-1} B^T P`.
    pub k: Mat,
    pub iterations: usize,
    /// Frobenius norm of the Riccati residual.
    pub residual: f64,
    /// Spectral abscissa of `A - B K`.
    pub closed_loop_abscissa: f64,
}

/// Stabilizing gain by eigenvalue shifting.
///
/// With `beta` large enough that `-(A + beta I)` is Hurwitz, solve
/// `(A + beta I) X + X (A + beta I)^T = 2 B B^T` and return `K = 2 B^T X^+`.
/// The closed loop `A - B K` has every controllable eigenvalue left of
/// `-beta`; uncontrollable modes are untouched, so the result stabilizes
/// exactly when `(A, B)` is stabilizable.
pub fn shifted_stabilizing_gain(a: &Mat, b: &Mat) -> Result<Mat> {
    let n = ensure_square(a, "state matrix")?;
    if b.nrows() != n {
        return Err(Error::dim("input matrix", format!("{n} rows"), b.nrows()));
    }
    let min_re = eigenvalues(a)?.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
    let beta = (-min_re).max(0.0) + 1.0;
    let shifted = -(a + Mat::identity(n, n) * beta);
    let rhs = symmetrize(&(b * b.transpose() * 2.0));
    // -(A + beta I) X - X (A + beta I)^T + 2 B B^T = 0
    let x = solve_hurwitz(&shifted.transpose(), &rhs)?;
    let x = symmetrize(&x);
    // exact inverse when X is numerically definite; the pseudoinverse
    // covers uncontrollable directions but truncates weak controllable ones
    if let Some(chol) = x.clone().cholesky() {
        return Ok(chol.solve(b).transpose() * 2.0);
    }
    let tol = 1e-10 * x.norm().max(f64::MIN_POSITIVE);
    let x_pinv = x
        .pseudo_inverse(tol)
        .map_err(|_| Error::Singular("shifted controllability Gramian"))?;
    Ok(b.transpose() * x_pinv * 2.0)
}

/// Stabilizing solution of `A^T P + P A - P B R^{-1} B^T P + Q = 0`.
///
/// Checks stabilizability of `(A, B)` and detectability of `(A, sqrt(Q))`
/// first, then runs Newton-Kleinman from [`shifted_stabilizing_gain`].
pub fn solve_care(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<CareSolution> {
    check_inputs(a, b, q, r)?;
    let stab = pbh_stabilizable(a, b)?;
    if !stab.ok {
        return Err(Error::Assumption(format!(
            "(A, B) is not stabilizable: PBH rank test fails at eigenvalue {:.6}",
            stab.failing_eigenvalue.unwrap_or_default()
        )));
    }
    let det = pbh_detectable(a, &sym_sqrt(q, "state weight")?)?;
    if !det.ok {
        return Err(Error::Assumption(format!(
            "(A, sqrt(Q)) is not detectable: PBH rank test fails at eigenvalue {:.6}",
            det.failing_eigenvalue.unwrap_or_default()
        )));
    }
    let k0 = shifted_stabilizing_gain(a, b)?;
    solve_care_from(a, b, q, r, &k0)
}

/// Newton-Kleinman from a caller-supplied stabilizing gain.
pub fn solve_care_from(a: &Mat, b: &Mat, q: &Mat, r: &Mat, k0: &Mat) -> Result<CareSolution> {
    check_inputs(a, b, q, r)?;
    let n = a.nrows();
    let m = b.ncols();
    if k0.shape() != (m, n) {
        return Err(Error::dim(
            "initial gain",
            format!("{m}x{n}"),
            format!("{}x{}", k0.nrows(), k0.ncols()),
        ));
    }
    let r_chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Input("R is not positive definite".into()))?;
    let r_inv_bt = r_chol.solve(&b.transpose());

    let mut k = k0.clone();
    let abscissa = spectral_abscissa(&(a - b * &k))?;
    if abscissa >= 0.0 {
        return Err(Error::Domain(format!(
            "initial gain does not stabilize (spectral abscissa {abscissa:.3e})"
        )));
    }
    let mut p_prev: Option<Mat> = None;
    let mut last_delta = f64::INFINITY;
    let mut iterations = 0;
    let mut p = Mat::zeros(n, n);
    for it in 1..=MAX_NEWTON {
        iterations = it;
        let acl = a - b * &k;
        if spectral_abscissa(&acl)? >= 0.0 {
            return Err(Error::Numerical {
                what: "Newton-Kleinman (lost stability)",
                iterations: it,
            });
        }
        let rhs = symmetrize(&(q + k.transpose() * r * &k));
        p = solve_hurwitz(&acl, &rhs)?;
        k = &r_inv_bt * &p;
        if let Some(prev) = &p_prev {
            let delta = (&p - prev).norm();
            let scale = 1.0 + p.norm();
            // quadratic convergence ends at the rounding floor of the
            // Lyapunov solves; a small step that stops shrinking marks it
            if delta <= 1e-14 * scale || (delta <= 1e-6 * scale && delta >= last_delta) {
                break;
            }
            last_delta = delta;
        }
        p_prev = Some(p.clone());
        if it == MAX_NEWTON {
            return Err(Error::Numerical {
                what: "Newton-Kleinman",
                iterations: it,
            });
        }
    }
    let residual_mat = riccati_residual(a, b, q, r, &p);
    let residual = residual_mat.norm();
    let scale = riccati_scale(a, b, q, r, &p);
    if residual > 1e-8 * scale {
        return Err(Error::Numerical {
            what: "Newton-Kleinman (residual above tolerance)",
            iterations,
        });
    }
    let closed_loop_abscissa = spectral_abscissa(&(a - b * &k))?;
    if closed_loop_abscissa >= 0.0 {
        return Err(Error::Numerical {
            what: "Newton-Kleinman (closed loop not Hurwitz)",
            iterations,
        });
    }
    Ok(CareSolution {
        p,
        k,
        iterations,
        residual,
        closed_loop_abscissa,
    })
}

pub(crate) fn riccati_residual(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Mat {
    let r_inv = r.clone().try_inverse().expect("R checked positive definite");
    a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q
}

pub(crate) fn riccati_scale(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> f64 {
    let r_inv = r.clone().try_inverse().expect("R checked positive definite");
    let quad = (p * b * r_inv * b.transpose() * p).norm();
    1.0 + q.norm() + 2.0 * a.norm() * p.norm() + quad
}

fn check_inputs(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<()> {
    let n = ensure_square(a, "CARE state matrix")?;
    ensure_finite(a, "CARE state matrix")?;
    ensure_finite(b, "CARE input matrix")?;
    if b.nrows() != n {
        return Err(Error::dim("CARE input matrix", format!("{n} rows"), b.nrows()));
    }
    ensure_symmetric(q, "CARE state weight")?;
    ensure_symmetric(r, "CARE input weight")?;
    if q.nrows() != n {
        return Err(Error::dim("CARE state weight", format!("{n}x{n}"), q.nrows()));
    }
    if r.nrows() != b.ncols() {
        return Err(Error::dim("CARE input weight", b.ncols(), r.nrows()));
    }
    Ok(())
}
