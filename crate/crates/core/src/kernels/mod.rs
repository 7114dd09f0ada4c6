//! Dense linear-algebra kernels shared by the rest of the crate.
//!
//! Every matrix in the crate is a [`Mat`], a dynamically sized column-major
//! `f64` matrix. Dimension semantics (which block is `A`, which is `Xbar`)
//! belong to the owning module; the kernels only check shapes and finiteness.

mod care;
mod eig;
mod expm;
mod lyap;
mod pbh;
mod pinv;

pub use care::{shifted_stabilizing_gain, solve_care, solve_care_from, CareSolution};
pub use eig::{eigenvalues, is_hurwitz, spectral_abscissa};
pub use expm::matrix_exponential;
pub(crate) use lyap::solve_hurwitz;
pub use lyap::{lyapunov_residual, solve_lyapunov};
pub use pbh::{pbh_detectable, pbh_stabilizable, PbhReport, MARGINAL_BAND};
pub use pinv::{numerical_rank, rank_threshold, right_pseudoinverse, row_space_split};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Build a matrix from row slices. Panics on ragged input; meant for literals.
pub fn mat(rows: &[&[f64]]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    assert!(rows.iter().all(|row| row.len() == c), "ragged matrix literal");
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

/// Build a matrix from owned rows, checking shape and finiteness.
pub fn try_from_rows(rows: &[Vec<f64>], what: &'static str) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|row| row.len() != c) {
        return Err(Error::dim(
            what,
            format!("{c} columns"),
            format!("{} columns", bad.len()),
        ));
    }
    let m = Mat::from_fn(r, c, |i, j| rows[i][j]);
    ensure_finite(&m, what)?;
    Ok(m)
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn ensure_finite(m: &Mat, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn ensure_square(m: &Mat, what: &'static str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(
            what,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if m.nrows() == 0 {
        return Err(Error::dim(what, "non-empty matrix", "0x0"));
    }
    Ok(m.nrows())
}

pub(crate) fn ensure_shape(m: &Mat, rows: usize, cols: usize, what: &'static str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dim(
            what,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).norm()
}

pub(crate) fn ensure_symmetric(m: &Mat, what: &'static str) -> Result<()> {
    ensure_square(m, what)?;
    ensure_finite(m, what)?;
    if asymmetry(m) > 1e-10 * (1.0 + m.norm()) {
        return Err(Error::Input(format!("{what} is not symmetric")));
    }
    Ok(())
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Tiny negative eigenvalues from round-off are clamped to zero.
pub fn sym_sqrt(m: &Mat, what: &'static str) -> Result<Mat> {
    ensure_symmetric(m, what)?;
    let eig = SymmetricEigen::new(symmetrize(m));
    let floor = -1e-12 * (1.0 + m.norm());
    if eig.eigenvalues.iter().any(|&l| l < floor) {
        return Err(Error::Input(format!("{what} is not positive semidefinite")));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Mat::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// `[[a, b], [c, d]]`, with shape checks.
pub fn block2x2(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Mat {
    assert_eq!(a.nrows(), b.nrows());
    assert_eq!(c.nrows(), d.nrows());
    assert_eq!(a.ncols(), c.ncols());
    assert_eq!(b.ncols(), d.ncols());
    let (r0, c0) = a.shape();
    let mut out = Mat::zeros(r0 + c.nrows(), c0 + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, c0), b.shape()).copy_from(b);
    out.view_mut((r0, 0), c.shape()).copy_from(c);
    out.view_mut((r0, c0), d.shape()).copy_from(d);
    out
}

pub fn vstack(top: &Mat, bottom: &Mat) -> Mat {
    assert_eq!(top.ncols(), bottom.ncols());
    let mut out = Mat::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}

pub fn hstack(left: &Mat, right: &Mat) -> Mat {
    assert_eq!(left.nrows(), right.nrows());
    let mut out = Mat::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape()).copy_from(right);
    out
}

/// `diag(a, b)` for square blocks.
pub fn block_diag(a: &Mat, b: &Mat) -> Mat {
    block2x2(
        a,
        &Mat::zeros(a.nrows(), b.ncols()),
        &Mat::zeros(b.nrows(), a.ncols()),
        b,
    )
}

/// 2-norm condition number from singular values.
pub fn condition_number(m: &Mat) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
