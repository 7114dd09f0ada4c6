use super::{ensure_square, ensure_symmetric, spectral_abscissa, Mat};
use crate::error::{Error, Result};

/// `Acl^T P + P Acl + Q`.
pub fn lyapunov_residual(acl: &Mat, p: &Mat, q: &Mat) -> Mat {
    acl.transpose() * p + p * acl + q
}

/// Unique symmetric `P` with `Acl^T P + P Acl + Q = 0` for Hurwitz `Acl`.
///
/// Solved as the Kronecker system `(I ⊗ Acl^T + Acl^T ⊗ I) vec(P) = -vec(Q)`
/// restricted to symmetric `P`, with one step of iterative refinement.
pub fn solve_lyapunov(acl: &Mat, q: &Mat) -> Result<Mat> {
    let n = ensure_square(acl, "Lyapunov closed-loop matrix")?;
    ensure_symmetric(q, "Lyapunov right-hand side")?;
    if q.nrows() != n {
        return Err(Error::dim(
            "Lyapunov right-hand side",
            format!("{n}x{n}"),
            format!("{}x{}", q.nrows(), q.ncols()),
        ));
    }
    let abscissa = spectral_abscissa(acl)?;
    if abscissa >= 0.0 {
        return Err(Error::Precondition(format!(
            "Lyapunov matrix is not Hurwitz (spectral abscissa {abscissa:.3e})"
        )));
    }
    solve_hurwitz(acl, q)
}

/// Solve on the `n (n + 1) / 2` upper-triangle unknowns. The operator maps
/// symmetric matrices to symmetric matrices, so this restriction is
/// nonsingular whenever the full Kronecker operator is.
pub(crate) fn solve_hurwitz(acl: &Mat, q: &Mat) -> Result<Mat> {
    let n = acl.nrows();
    let dim = n * (n + 1) / 2;
    let idx = |i: usize, j: usize| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        b * (b + 1) / 2 + a
    };
    // row (i, j), i <= j: sum_k A[k, i] P[k, j] + P[i, k] A[k, j]
    let mut op = Mat::zeros(dim, dim);
    for j in 0..n {
        for i in 0..=j {
            let r = idx(i, j);
            for k in 0..n {
                op[(r, idx(k, j))] += acl[(k, i)];
                op[(r, idx(i, k))] += acl[(k, j)];
            }
        }
    }
    let lu = op.lu();
    let solve = |rhs: &Mat| -> Result<Mat> {
        let mut v = nalgebra::DVector::zeros(dim);
        for j in 0..n {
            for i in 0..=j {
                v[idx(i, j)] = -0.5 * (rhs[(i, j)] + rhs[(j, i)]);
            }
        }
        if !lu.solve_mut(&mut v) {
            return Err(Error::Singular("Lyapunov operator"));
        }
        Ok(Mat::from_fn(n, n, |i, j| v[idx(i, j)]))
    };
    let mut p = solve(q)?;
    let r = lyapunov_residual(acl, &p, q);
    p += solve(&r)?;
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("Lyapunov operator"));
    }
    Ok(p)
}
