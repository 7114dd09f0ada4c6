//! Plants, integral augmentation, experiments and data matrices.

mod checks;
mod collect;
mod covariance;
mod excitation;
mod pid;

pub use checks::{
    check_aug_detectable, check_aug_stabilizable, preflight, CheckOutcome, DetectabilityReport, Preflight,
    StabilizabilityReport, DATA_RANK, DETECTABILITY, STABILIZABILITY,
};
pub(crate) use collect::advance;
pub use collect::{collect_derivative_data, collect_integral_data, simulate_zoh, DataBatch, SamplingVariant};
pub use covariance::{build_covariances, check_pe_rank, CovariancePack, PeRank};
pub use excitation::Excitation;
pub use pid::pid_to_augmented_gain;

use crate::error::{Error, Result};
use crate::kernels::{block2x2, block_diag, ensure_finite, ensure_square, ensure_symmetric, min_sym_eigenvalue, Mat};

/// Continuous-time plant `x' = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    a: Mat,
    b: Mat,
    c: Mat,
}

impl LtiModel {
    pub fn new(a: Mat, b: Mat, c: Mat) -> Result<Self> {
        let n = ensure_square(&a, "A")?;
        ensure_finite(&a, "A")?;
        ensure_finite(&b, "B")?;
        ensure_finite(&c, "C")?;
        if b.nrows() != n {
            return Err(Error::dim("B", format!("{n} rows"), format!("{} rows", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::dim(
                "C",
                format!("{n} columns"),
                format!("{} columns", c.ncols()),
            ));
        }
        if b.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::Input("plant needs at least one input and one output".into()));
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// LQI needs at least as many inputs as tracked outputs.
    pub fn dimension_warning(&self) -> Option<String> {
        (self.p() > self.m()).then(|| {
            format!(
                "{} tracked outputs exceed {} inputs; integral augmentation cannot be stabilized",
                self.p(),
                self.m()
            )
        })
    }

    pub fn augment(&self) -> AugmentedModel {
        augment(self)
    }
}

/// Plant stacked with the tracking-error integrator, in error coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub aa: Mat,
    pub ba: Mat,
    pub base: LtiModel,
}

impl AugmentedModel {
    pub fn dim(&self) -> usize {
        self.aa.nrows()
    }

    /// `Aa - Ba K`.
    pub fn closed_loop(&self, k: &Mat) -> Result<Mat> {
        if k.shape() != (self.base.m(), self.dim()) {
            return Err(Error::dim(
                "augmented gain",
                format!("{}x{}", self.base.m(), self.dim()),
                format!("{}x{}", k.nrows(), k.ncols()),
            ));
        }
        Ok(&self.aa - &self.ba * k)
    }

    /// Reference injection `[0; I_p]`.
    pub fn reference_input(&self) -> Mat {
        let (n, p) = (self.base.n(), self.base.p());
        let mut e = Mat::zeros(n + p, p);
        e.view_mut((n, 0), (p, p)).fill_with_identity();
        e
    }
}

/// `Aa = [[A, 0], [-C, 0]]`, `Ba = [[B], [0]]`.
pub fn augment(model: &LtiModel) -> AugmentedModel {
    let (n, m, p) = (model.n(), model.m(), model.p());
    let aa = block2x2(&model.a, &Mat::zeros(n, p), &(-&model.c), &Mat::zeros(p, p));
    let mut ba = Mat::zeros(n + p, m);
    ba.view_mut((0, 0), (n, m)).copy_from(&model.b);
    AugmentedModel {
        aa,
        ba,
        base: model.clone(),
    }
}

/// LQI weights: `Qa = diag(Qx, Qz)` on the augmented state and `R` on the input.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpec {
    qx: Mat,
    qz: Mat,
    r: Mat,
}

impl WeightSpec {
    pub fn new(qx: Mat, qz: Mat, r: Mat) -> Result<Self> {
        ensure_symmetric(&qx, "Qx")?;
        ensure_symmetric(&qz, "Qz")?;
        ensure_symmetric(&r, "R")?;
        if min_sym_eigenvalue(&qx) < -1e-12 * (1.0 + qx.norm()) {
            return Err(Error::Input("Qx must be positive semidefinite".into()));
        }
        if min_sym_eigenvalue(&qz) <= 0.0 {
            return Err(Error::Input("Qz must be positive definite".into()));
        }
        if min_sym_eigenvalue(&r) <= 0.0 {
            return Err(Error::Input("R must be positive definite".into()));
        }
        Ok(Self { qx, qz, r })
    }

    pub fn qx(&self) -> &Mat {
        &self.qx
    }

    pub fn qz(&self) -> &Mat {
        &self.qz
    }

    pub fn r(&self) -> &Mat {
        &self.r
    }

    pub fn qa(&self) -> Mat {
        block_diag(&self.qx, &self.qz)
    }

    pub(crate) fn check_against(&self, n: usize, m: usize, p: usize) -> Result<()> {
        let dims = [
            (self.qx.nrows(), n, "Qx"),
            (self.qz.nrows(), p, "Qz"),
            (self.r.nrows(), m, "R"),
        ];
        for (got, want, what) in dims {
            if got != want {
                return Err(Error::dim(what, format!("{want}x{want}"), format!("{got}x{got}")));
            }
        }
        Ok(())
    }
}
