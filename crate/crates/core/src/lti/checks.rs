use num_complex::Complex64;

use super::{check_pe_rank, CovariancePack, LtiModel, WeightSpec};
use crate::error::Result;
use crate::kernels::{block2x2, numerical_rank, pbh_detectable, pbh_stabilizable, sym_sqrt, vstack, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizabilityReport {
    /// `(Aa, Ba)` stabilizable: both sub-checks pass.
    pub ok: bool,
    /// PBH on `(A, B)` over eigenvalues with `Re >= 0`.
    pub base_stabilizable: bool,
    pub failing_eigenvalue: Option<Complex64>,
    /// `rank [[A, B], [C, 0]] == n + p`.
    pub rank_condition_ok: bool,
    pub rank: usize,
}

/// Stabilizability of the integral-augmented pair, checked on the base plant.
pub fn check_aug_stabilizable(model: &LtiModel) -> Result<StabilizabilityReport> {
    let (n, m, p) = (model.n(), model.m(), model.p());
    let pbh = pbh_stabilizable(model.a(), model.b())?;
    let rosenbrock = block2x2(model.a(), model.b(), model.c(), &Mat::zeros(p, m));
    let (rank, _) = numerical_rank(&rosenbrock);
    let rank_condition_ok = rank == n + p;
    Ok(StabilizabilityReport {
        ok: pbh.ok && rank_condition_ok,
        base_stabilizable: pbh.ok,
        failing_eigenvalue: pbh.failing_eigenvalue,
        rank_condition_ok,
        rank,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectabilityReport {
    pub ok: bool,
    pub failing_eigenvalue: Option<Complex64>,
}

/// Detectability of `(Aa, sqrt(Qa))`, equivalently of `(A, [C; sqrt(Qx)])`.
pub fn check_aug_detectable(model: &LtiModel, weights: &WeightSpec) -> Result<DetectabilityReport> {
    weights.check_against(model.n(), model.m(), model.p())?;
    let observed = vstack(model.c(), &sym_sqrt(weights.qx(), "Qx")?);
    let pbh = pbh_detectable(model.a(), &observed)?;
    Ok(DetectabilityReport {
        ok: pbh.ok,
        failing_eigenvalue: pbh.failing_eigenvalue,
    })
}

/// One row of a preflight table. `passed` is `None` when the check was not run.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: Option<bool>,
    pub detail: String,
}

/// Conditions under which the data-driven LQI design applies.
#[derive(Debug, Clone, PartialEq)]
pub struct Preflight {
    /// Augmented stabilizability, augmented detectability, data rank.
    pub checks: Vec<CheckOutcome>,
}

impl Preflight {
    /// No check failed. Skipped checks do not count as failures.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed != Some(false))
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| c.passed == Some(false))
            .map(|c| c.name)
            .collect()
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let status = match c.passed {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "SKIP",
            };
            out += &format!("{:width$}  {status}  {}\n", c.name, c.detail);
        }
        out
    }
}

pub const STABILIZABILITY: &str = "augmented stabilizability";
pub const DETECTABILITY: &str = "augmented detectability";
pub const DATA_RANK: &str = "rank of [Ubar; Xbar]";

/// Run the three checks. The data rank is only checked when a pack is given.
pub fn preflight(model: &LtiModel, weights: &WeightSpec, pack: Option<&CovariancePack>) -> Result<Preflight> {
    let (n, p) = (model.n(), model.p());
    let stab = check_aug_stabilizable(model)?;
    let mut detail = format!("(A, B) stabilizable: {}", stab.base_stabilizable);
    if let Some(l) = stab.failing_eigenvalue {
        detail += &format!(" (fails at {:.4}{:+.4}i)", l.re, l.im);
    }
    detail += &format!(", rank [A B; C 0] = {}/{}", stab.rank, n + p);
    let det = check_aug_detectable(model, weights)?;
    let det_detail = match det.failing_eigenvalue {
        Some(l) => format!("(A, [C; sqrt(Qx)]) loses detectability at {:.4}{:+.4}i", l.re, l.im),
        None => "(A, [C; sqrt(Qx)]) detectable".into(),
    };
    let rank = match pack {
        Some(pack) => {
            let pe = check_pe_rank(pack);
            CheckOutcome {
                name: DATA_RANK,
                passed: Some(pe.ok),
                detail: format!("rank {}/{} (threshold {:.3e})", pe.rank, pe.required, pe.threshold),
            }
        }
        None => CheckOutcome {
            name: DATA_RANK,
            passed: None,
            detail: "no data".into(),
        },
    };
    Ok(Preflight {
        checks: vec![
            CheckOutcome {
                name: STABILIZABILITY,
                passed: Some(stab.ok),
                detail,
            },
            CheckOutcome {
                name: DETECTABILITY,
                passed: Some(det.ok),
                detail: det_detail,
            },
            rank,
        ],
    })
}
