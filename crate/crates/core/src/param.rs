//! Data-driven parameterization of the augmented closed loop.
//!
//! A gain `K = [K_PD, K_I]` corresponds to the unique `G` solving
//! `[Xbar; Ubar] G = [[I_n, 0], [-K]]`; the closed loop `Aa - Ba K` is then
//! `[Xpbar; -Ybar] G`, computed without the plant matrices.

use crate::error::{Error, Result};
use crate::kernels::{condition_number, spectral_abscissa, vstack, Mat};
use crate::lti::{check_pe_rank, CovariancePack};

/// Tolerance on `Xbar G = [I, 0]` for freshly solved parameterizers.
pub const CONSTRUCTION_TOL: f64 = 1e-9;
/// Looser tolerance for membership tests on integrated trajectories.
pub const MEMBERSHIP_TOL: f64 = 1e-7;
/// Stacked data beyond this condition number is rejected.
pub const MAX_CONDITION: f64 = 1e13;

#[derive(Debug, Clone)]
pub struct Parameterizer<'a> {
    pub g: Mat,
    pub pack: &'a CovariancePack,
}

impl<'a> Parameterizer<'a> {
    /// Wrap a matrix without checking the affine constraint.
    pub fn new(g: Mat, pack: &'a CovariancePack) -> Result<Self> {
        let (n, m, p) = (pack.n(), pack.m(), pack.p());
        if g.shape() != (n + m, n + p) {
            return Err(Error::dim(
                "parameterizer",
                format!("{}x{}", n + m, n + p),
                format!("{}x{}", g.nrows(), g.ncols()),
            ));
        }
        Ok(Self { g, pack })
    }

    /// `[I_n, 0_{n,p}]`.
    pub fn constraint_target(pack: &CovariancePack) -> Mat {
        let (n, p) = (pack.n(), pack.p());
        let mut t = Mat::zeros(n, n + p);
        t.view_mut((0, 0), (n, n)).fill_with_identity();
        t
    }

    /// `||Xbar G - [I, 0]||_F`.
    pub fn constraint_residual(&self) -> f64 {
        (&self.pack.xbar * &self.g - Self::constraint_target(self.pack)).norm()
    }

    pub fn gain(&self) -> Result<Mat> {
        parameterizer_to_gain(self)
    }

    pub fn closed_loop(&self) -> Mat {
        closed_loop_from_data(self)
    }

    pub fn is_in_g_set(&self) -> bool {
        is_in_g_set(self)
    }
}

/// Solve `[Xbar; Ubar] G = [[I, 0], [-K]]` by LU with partial pivoting.
pub fn gain_to_parameterizer<'a>(k: &Mat, pack: &'a CovariancePack) -> Result<Parameterizer<'a>> {
    let (n, m, p) = (pack.n(), pack.m(), pack.p());
    if k.shape() != (m, n + p) {
        return Err(Error::dim(
            "gain",
            format!("{m}x{}", n + p),
            format!("{}x{}", k.nrows(), k.ncols()),
        ));
    }
    let pe = check_pe_rank(pack);
    if !pe.ok {
        return Err(Error::Rank {
            context: "stacked covariances [Ubar; Xbar]",
            rank: pe.rank,
            required: pe.required,
            threshold: pe.threshold,
        });
    }
    let stacked = pack.stacked();
    let cond = condition_number(&stacked);
    if cond > MAX_CONDITION {
        return Err(Error::Conditioning {
            what: "stacked covariances [Xbar; Ubar]",
            cond,
        });
    }
    let rhs = vstack(&Parameterizer::constraint_target(pack), &(-k));
    let g = stacked
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("stacked covariances [Xbar; Ubar]"))?;
    let param = Parameterizer::new(g, pack)?;
    let residual = param.constraint_residual();
    if residual > CONSTRUCTION_TOL {
        return Err(Error::Consistency {
            what: "Xbar G = [I, 0]",
            residual,
            tolerance: CONSTRUCTION_TOL,
        });
    }
    Ok(param)
}

/// `K = -Ubar G`.
pub fn parameterizer_to_gain(param: &Parameterizer<'_>) -> Result<Mat> {
    let residual = param.constraint_residual();
    if residual > MEMBERSHIP_TOL {
        return Err(Error::Consistency {
            what: "Xbar G = [I, 0]",
            residual,
            tolerance: MEMBERSHIP_TOL,
        });
    }
    Ok(-(&param.pack.ubar * &param.g))
}

/// `[Xpbar; -Ybar] G`.
pub fn closed_loop_from_data(param: &Parameterizer<'_>) -> Mat {
    param.pack.closed_loop_data() * &param.g
}

/// Affine constraint within tolerance and Hurwitz data closed loop.
pub fn is_in_g_set(param: &Parameterizer<'_>) -> bool {
    param.constraint_residual() <= MEMBERSHIP_TOL
        && spectral_abscissa(&closed_loop_from_data(param)).is_ok_and(|a| a < 0.0)
}
