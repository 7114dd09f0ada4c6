use super::Mat;
use crate::error::{Error, Result};

/// `max(rows, cols) * sigma_max * 1e-10`.
pub fn rank_threshold(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * 1e-10
}

/// Numerical rank and the threshold used to decide it.
pub fn numerical_rank(m: &Mat) -> (usize, f64) {
    if m.is_empty() {
        return (0, 0.0);
    }
    let sv = m.clone().svd(false, false).singular_values;
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let tol = rank_threshold(m.nrows(), m.ncols(), sigma_max);
    let rank = if sigma_max == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > tol).count()
    };
    (rank, tol)
}

/// Minimum-norm right inverse `M^T (M M^T)^{-1}` of a full-row-rank matrix.
/// Computed from a QR factorization of `M^T`.
pub fn right_pseudoinverse(m: &Mat) -> Result<Mat> {
    let (rank, threshold) = numerical_rank(m);
    if rank < m.nrows() {
        return Err(Error::Rank {
            context: "right pseudoinverse",
            rank,
            required: m.nrows(),
            threshold,
        });
    }
    // M^T = Q R  =>  M^+ = Q R^{-T}, without squaring the condition number
    let qr = m.transpose().qr();
    let q_t = qr.q().transpose();
    let x = qr
        .r()
        .solve_upper_triangular(&q_t)
        .ok_or(Error::Singular("right pseudoinverse triangular factor"))?;
    Ok(x.transpose())
}

/// Orthonormal bases of the row space and the null space of `a`.
pub fn row_space_split(a: &Mat) -> (Mat, Mat) {
    let nv = a.ncols();
    if a.nrows() == 0 {
        return (Mat::zeros(nv, 0), Mat::identity(nv, nv));
    }
    let qr = a.transpose().col_piv_qr();
    let r = qr.r();
    let diag_max = (0..r.nrows().min(r.ncols()))
        .map(|i| r[(i, i)].abs())
        .fold(0.0, f64::max);
    let tol = diag_max * 1e-12 * nv as f64;
    let rank = (0..r.nrows().min(r.ncols())).filter(|&i| r[(i, i)].abs() > tol).count();
    let mut q = Mat::identity(nv, nv);
    qr.q_tr_mul(&mut q);
    let q = q.transpose();
    (q.columns(0, rank).into_owned(), q.columns(rank, nv - rank).into_owned())
}
