//! Data-driven LQI synthesis as a semidefinite program.
//!
//! Decision variables are `W` (symmetric, `n+p`), `Z` (`(n+m) x (n+p)`) and
//! `S` (symmetric, `m`). The program is
//!
//! ```text
//! minimize    tr(Qa W) + tr(S)
//! subject to  [[S, R^½ Ubar Z], [Z^T Ubar^T R^½, W]] ⪰ 0
//!             [Xpbar; -Ybar] Z + Z^T [Xpbar; -Ybar]^T + I ⪯ 0
//!             [I_n, 0] W = Xbar Z
//!             W ⪰ eps_W I
//! ```
//!
//! and the gain is recovered as `K = -Ubar Z W^{-1}`. Any feasible point
//! already gives a stabilizing gain; the optimum is the LQR gain of the
//! augmented plant.

mod barrier;
mod problem;

pub use barrier::{solve_sdp, solve_sdp_from, SdpOptions};
pub use problem::{assemble_sdp, AffineLmi, SdpProblem, VariableLayout};

use crate::error::{Error, Result};
use crate::kernels::{condition_number, spectral_abscissa, Mat};
use crate::lti::CovariancePack;

/// W beyond this condition number is not inverted.
pub const MAX_W_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub w: Mat,
    pub z: Mat,
    pub s: Mat,
    pub objective: f64,
    /// Total Newton steps across all centering problems.
    pub barrier_iterations: usize,
    pub outer_iterations: usize,
    /// Total cone dimension over the final barrier parameter.
    pub duality_gap_estimate: f64,
    /// `||[I, 0] W - Xbar Z||_F`.
    pub equality_residual: f64,
    /// Smallest eigenvalue of each cone constraint, in declaration order.
    pub cone_min_eigenvalues: Vec<f64>,
    /// Outer iterates whose gain failed to stabilize the data closed loop.
    /// Only populated when iterate checks are enabled.
    pub stability_violations: usize,
}

impl SdpSolution {
    /// `tr(S) - tr(R^½ Ubar Z W^{-1} Z^T Ubar^T R^½)`: slack in the epigraph bound.
    pub fn epigraph_gap(&self, problem: &SdpProblem) -> Result<f64> {
        let y = &problem.r_half * &problem.pack.ubar * &self.z;
        let w_inv = self.w.clone().cholesky().ok_or(Error::Singular("W"))?.inverse();
        Ok(self.s.trace() - (&y * w_inv * y.transpose()).trace())
    }
}

/// `K = -Ubar Z W^{-1}`, refusing near-singular `W` or a non-Hurwitz result.
pub fn extract_gain(sol: &SdpSolution, pack: &CovariancePack) -> Result<Mat> {
    let cond = condition_number(&sol.w);
    if cond > MAX_W_CONDITION {
        return Err(Error::Conditioning { what: "W", cond });
    }
    let w_chol = sol.w.clone().cholesky().ok_or(Error::Singular("W"))?;
    // K W = -Ubar Z  =>  K = -(W^{-1} Z^T Ubar^T)^T
    let g = w_chol.solve(&sol.z.transpose()).transpose();
    let k = -(&pack.ubar * &g);
    let abscissa = spectral_abscissa(&(pack.closed_loop_data() * &g))?;
    if abscissa >= 0.0 {
        return Err(Error::SolverAccuracy(format!(
            "data closed loop from the SDP iterate has spectral abscissa {abscissa:.3e}; tighten the solver tolerance"
        )));
    }
    Ok(k)
}
