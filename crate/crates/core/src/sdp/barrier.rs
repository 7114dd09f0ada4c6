use super::problem::SdpProblem;
use super::{extract_gain, SdpSolution};
use crate::error::{Error, Result};
use crate::kernels::{
    min_sym_eigenvalue, row_space_split, shifted_stabilizing_gain, solve_lyapunov, spectral_abscissa, symmetrize, Mat,
    Vector,
};
use crate::param::gain_to_parameterizer;

/// Interior-point settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpOptions {
    /// Target on the duality gap bound, relative to `max(1, |objective|)`.
    pub tol: f64,
    pub max_outer: usize,
    /// Barrier weight multiplier between centering problems.
    pub mu_factor: f64,
    /// Check that each outer iterate yields a stabilizing gain.
    pub check_iterates: bool,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_outer: 60,
            mu_factor: 10.0,
            check_iterates: false,
        }
    }
}

impl SdpOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::Input(format!(
                "SDP tolerance must be positive, got {}",
                self.tol
            )));
        }
        if !(self.mu_factor.is_finite() && self.mu_factor > 1.0) {
            return Err(Error::Input(format!(
                "SDP mu factor must exceed 1, got {}",
                self.mu_factor
            )));
        }
        if self.max_outer == 0 {
            return Err(Error::Input("SDP needs at least one outer iteration".into()));
        }
        Ok(())
    }
}

const MAX_NEWTON: usize = 200;
const CENTERING_TOL: f64 = 1e-10;
const LS_ALPHA: f64 = 0.25;
const LS_BETA: f64 = 0.5;
const MIN_STEP: f64 = 1e-14;
/// Relative gap below which a stalled line search still counts as converged.
const STALL_ACCEPT: f64 = 1e-7;

/// Solve from a strictly feasible point built around the shifted gain of the
/// plant identified from the covariances.
pub fn solve_sdp(problem: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    solve_inner(problem, opts, None)
}

/// Solve from a strictly feasible point built around a caller gain `k0`.
pub fn solve_sdp_from(problem: &SdpProblem, opts: &SdpOptions, k0: &Mat) -> Result<SdpSolution> {
    solve_inner(problem, opts, Some(k0))
}

/// `[[A, B], [-C, 0]]` from `[Xpbar; -Ybar] = [[A, B], [-C, 0]] [Xbar; Ubar]`.
fn identified_blocks(problem: &SdpProblem) -> Result<(Mat, Mat)> {
    let pack = &problem.pack;
    let (n, m, p) = (pack.n(), pack.m(), pack.p());
    let stacked_t = pack.stacked().transpose();
    let blocks = stacked_t
        .lu()
        .solve(&pack.closed_loop_data().transpose())
        .ok_or(Error::Singular("stacked covariances [Xbar; Ubar]"))?
        .transpose();
    let mut aa = Mat::zeros(n + p, n + p);
    aa.view_mut((0, 0), (n + p, n))
        .copy_from(&blocks.view((0, 0), (n + p, n)));
    let mut ba = Mat::zeros(n + p, m);
    ba.view_mut((0, 0), (n, m)).copy_from(&blocks.view((0, n), (n, m)));
    Ok((aa, ba))
}

/// Strictly feasible `(W, Z, S)` from a gain that stabilizes the data loop.
fn phase_one(problem: &SdpProblem, k0: Option<&Mat>) -> Result<Vector> {
    let pack = &problem.pack;
    let big_n = pack.n() + pack.p();
    let k0 = match k0 {
        Some(k) => k.clone(),
        None => {
            let (aa, ba) = identified_blocks(problem)?;
            shifted_stabilizing_gain(&aa, &ba)?
        }
    };
    let g = gain_to_parameterizer(&k0, pack)?;
    let acl = g.closed_loop();
    let abscissa = spectral_abscissa(&acl)?;
    if abscissa >= 0.0 {
        let msg = format!("no stabilizing gain found: starting closed loop has spectral abscissa {abscissa:.3e}");
        return Err(Error::Infeasible(msg));
    }
    // Acl W + W Acl^T + 2I = 0 leaves a margin of I in the stability LMI
    let mut w = symmetrize(&solve_lyapunov(&acl.transpose(), &(Mat::identity(big_n, big_n) * 2.0))?);
    let floor = min_sym_eigenvalue(&w);
    if floor <= 2.0 * problem.eps_w {
        w *= 2.0 * problem.eps_w / floor.max(f64::MIN_POSITIVE) + 1.0;
    }
    let z = &g.g * &w;
    let y = &problem.r_half * &pack.ubar * &z;
    let w_chol = w.clone().cholesky().ok_or(Error::Singular("Phase I W"))?;
    let s = symmetrize(&(&y * w_chol.solve(&y.transpose())));
    let s = &s + Mat::identity(s.nrows(), s.nrows()) * (1.0 + s.trace());
    Ok(problem.layout.pack(&w, &z, &s))
}

struct Barrier<'a> {
    problem: &'a SdpProblem,
}

impl Barrier<'_> {
    /// `-sum log det F_j(x)`, or `None` outside the cone.
    fn value(&self, x: &Vector) -> Option<f64> {
        let mut total = 0.0;
        for lmi in &self.problem.lmis {
            let chol = symmetrize(&lmi.eval(x)).cholesky()?;
            total -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        total.is_finite().then_some(total)
    }

    fn gradient_hessian(&self, x: &Vector) -> Option<(Vector, Mat)> {
        let nv = x.len();
        let mut grad = Vector::zeros(nv);
        let mut hess = Mat::zeros(nv, nv);
        for lmi in &self.problem.lmis {
            let inv = symmetrize(&lmi.eval(x)).cholesky()?.inverse();
            let prods: Vec<Mat> = lmi.coeffs.iter().map(|f| &inv * f).collect();
            for i in 0..nv {
                grad[i] -= prods[i].trace();
                for k in i..nv {
                    let h = prods[i].component_mul(&prods[k].transpose()).sum();
                    hess[(i, k)] += h;
                    if k != i {
                        hess[(k, i)] += h;
                    }
                }
            }
        }
        Some((grad, hess))
    }
}

fn solve_inner(problem: &SdpProblem, opts: &SdpOptions, k0: Option<&Mat>) -> Result<SdpSolution> {
    opts.validate()?;
    let (range, null) = row_space_split(&problem.eq_matrix);
    let barrier = Barrier { problem };
    let mut x = phase_one(problem, k0)?;
    x -= &range * (range.transpose() * &x);
    if barrier.value(&x).is_none() {
        return Err(Error::Numerical {
            what: "Phase I point left the cone after equality projection",
            iterations: 0,
        });
    }

    let c = &problem.objective;
    let nu = problem.cone_dimension() as f64;
    let mut t = (nu / c.dot(&x).abs().max(1e-8)).clamp(1e-6, 1e6);
    let mut newton_total = 0;
    let mut violations = 0;
    let c_red = null.transpose() * c;

    for outer in 1..=opts.max_outer {
        let mut stalled = false;
        for _ in 0..MAX_NEWTON {
            let Some((g_bar, h_bar)) = barrier.gradient_hessian(&x) else {
                return Err(Error::Numerical {
                    what: "barrier evaluated outside the cone",
                    iterations: newton_total,
                });
            };
            let g = &c_red * t + null.transpose() * g_bar;
            let h = symmetrize(&(null.transpose() * h_bar * &null));
            let dy = match h.clone().cholesky() {
                Some(ch) => -ch.solve(&g),
                None => h.lu().solve(&(-&g)).ok_or(Error::Singular("reduced barrier Hessian"))?,
            };
            newton_total += 1;
            let decrement = -g.dot(&dy);
            if decrement / 2.0 <= CENTERING_TOL {
                break;
            }
            let dx = &null * &dy;
            let phi0 = t * c.dot(&x) + barrier.value(&x).unwrap_or(f64::INFINITY);
            let mut step = 1.0;
            let accepted = loop {
                let trial = &x + &dx * step;
                if let Some(b) = barrier.value(&trial) {
                    if t * c.dot(&trial) + b <= phi0 - LS_ALPHA * step * decrement {
                        break Some(trial);
                    }
                }
                step *= LS_BETA;
                if step < MIN_STEP {
                    break None;
                }
            };
            match accepted {
                Some(trial) => x = trial,
                None => {
                    stalled = true;
                    break;
                }
            }
        }

        let objective = c.dot(&x);
        let gap = nu / t;
        let rel_gap = gap / objective.abs().max(1.0);
        let solution = package(problem, &x, objective, gap, newton_total, outer, violations);
        if opts.check_iterates && extract_gain(&solution, &problem.pack).is_err() {
            violations += 1;
        }
        let solution = SdpSolution {
            stability_violations: violations,
            ..solution
        };
        if rel_gap <= opts.tol {
            return Ok(solution);
        }
        if stalled {
            if rel_gap <= STALL_ACCEPT {
                return Ok(solution);
            }
            return Err(Error::Stalled(format!(
                "line search failed at outer iteration {outer} with relative gap {rel_gap:.3e}"
            )));
        }
        if outer == opts.max_outer {
            return Err(Error::SdpNonConvergence {
                outer,
                gap,
                best: Box::new(solution),
            });
        }
        t *= opts.mu_factor;
    }
    unreachable!("outer loop returns on its final iteration")
}

fn package(
    problem: &SdpProblem,
    x: &Vector,
    objective: f64,
    gap: f64,
    newton: usize,
    outer: usize,
    violations: usize,
) -> SdpSolution {
    let (w, z, s) = problem.layout.unpack(x);
    let equality_residual = problem.equality_map(&w, &z).norm();
    let cone_min_eigenvalues = problem.lmis.iter().map(|l| min_sym_eigenvalue(&l.eval(x))).collect();
    SdpSolution {
        w,
        z,
        s,
        objective,
        barrier_iterations: newton,
        outer_iterations: outer,
        duality_gap_estimate: gap,
        equality_residual,
        cone_min_eigenvalues,
        stability_violations: violations,
    }
}
