use super::DataBatch;
use crate::error::{Error, Result};
use crate::kernels::{numerical_rank, vstack, Mat};

/// Sample covariances of a batch against the stacked regressor `[U; X]`.
///
/// All four share the `1/T` normalization, so the data satisfy
/// `[Xpbar; -Ybar] = [[A, B], [-C, 0]] [Xbar; Ubar]` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePack {
    pub xbar: Mat,
    pub ubar: Mat,
    pub xpbar: Mat,
    pub ybar: Mat,
    /// Number of samples the covariances were averaged over.
    pub samples: usize,
}

impl CovariancePack {
    pub fn new(xbar: Mat, ubar: Mat, xpbar: Mat, ybar: Mat, samples: usize) -> Result<Self> {
        let n = xbar.nrows();
        let m = ubar.nrows();
        let width = n + m;
        for (mat, rows, what) in [(&xbar, n, "Xbar"), (&ubar, m, "Ubar"), (&xpbar, n, "Xpbar")] {
            if mat.shape() != (rows, width) {
                return Err(Error::dim(
                    what,
                    format!("{rows}x{width}"),
                    format!("{}x{}", mat.nrows(), mat.ncols()),
                ));
            }
        }
        if ybar.ncols() != width || ybar.nrows() == 0 {
            return Err(Error::dim(
                "Ybar",
                format!("px{width}"),
                format!("{}x{}", ybar.nrows(), ybar.ncols()),
            ));
        }
        for (mat, what) in [(&xbar, "Xbar"), (&ubar, "Ubar"), (&xpbar, "Xpbar"), (&ybar, "Ybar")] {
            crate::kernels::ensure_finite(mat, what)?;
        }
        Ok(Self {
            xbar,
            ubar,
            xpbar,
            ybar,
            samples,
        })
    }

    pub fn n(&self) -> usize {
        self.xbar.nrows()
    }

    pub fn m(&self) -> usize {
        self.ubar.nrows()
    }

    pub fn p(&self) -> usize {
        self.ybar.nrows()
    }

    /// `[Xbar; Ubar]`, square of size `n + m`.
    pub fn stacked(&self) -> Mat {
        vstack(&self.xbar, &self.ubar)
    }

    /// `[Xpbar; -Ybar]`, the data image of `[[A, B], [-C, 0]]`.
    pub fn closed_loop_data(&self) -> Mat {
        vstack(&self.xpbar, &(-&self.ybar))
    }
}

pub fn build_covariances(batch: &DataBatch) -> Result<CovariancePack> {
    let t = batch.samples();
    let regressor = vstack(&batch.u, &batch.x);
    let rt = regressor.transpose();
    let scale = 1.0 / t as f64;
    CovariancePack::new(
        &batch.x * &rt * scale,
        &batch.u * &rt * scale,
        &batch.xp * &rt * scale,
        &batch.y * &rt * scale,
        t,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeRank {
    pub rank: usize,
    pub required: usize,
    pub threshold: f64,
    pub ok: bool,
}

/// Numerical rank of `[Ubar; Xbar]` against `n + m`.
pub fn check_pe_rank(pack: &CovariancePack) -> PeRank {
    let (rank, threshold) = numerical_rank(&vstack(&pack.ubar, &pack.xbar));
    let required = pack.n() + pack.m();
    PeRank {
        rank,
        required,
        threshold,
        ok: rank == required,
    }
}
