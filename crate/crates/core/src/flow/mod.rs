//! Projected policy-gradient flow on the data parameterization.
//!
//! The cost of a parameterizer is `f(G) = tr(P_G)` where
//! `(Xi G)^T P + P (Xi G) + Qa + (Ubar G)^T R (Ubar G) = 0` and
//! `Xi = [Xpbar; -Ybar]`. Its gradient is
//! `2 (Ubar^T R Ubar G + Xi^T P_G) W_G` with `Xi G W + W (Xi G)^T + I = 0`,
//! and the flow `dG/dt = -alpha Pi grad f` keeps `Xbar G = [I, 0]` because
//! `Pi = I - Xbar^+ Xbar` projects onto the kernel of `Xbar`.

mod integrate;

pub use integrate::{
    integrate_flow, integrate_flow_rescaled, integrate_model_flow, suggest_model_step, suggest_step, FlowOptions,
    FlowSample, FlowStop, FlowTrajectory,
};

use crate::error::{Error, Result};
use crate::kernels::{
    ensure_shape, right_pseudoinverse, solve_hurwitz, solve_lyapunov, spectral_abscissa, symmetrize, Mat,
};
use crate::lti::{AugmentedModel, CovariancePack, WeightSpec};
use crate::param::Parameterizer;

fn check_weights(pack: &CovariancePack, weights: &WeightSpec) -> Result<()> {
    weights.check_against(pack.n(), pack.m(), pack.p())
}

fn require_hurwitz(acl: &Mat, what: &str) -> Result<()> {
    let abscissa = spectral_abscissa(acl)?;
    if abscissa >= 0.0 {
        return Err(Error::Domain(format!(
            "{what} closed loop is not Hurwitz (spectral abscissa {abscissa:.3e})"
        )));
    }
    Ok(())
}

/// `(P, W)` with `Acl^T P + P Acl + q = 0` and `Acl W + W Acl^T + I = 0`.
/// A positive definite `W` certifies that `Acl` is Hurwitz, which saves an
/// eigenvalue computation per evaluation.
pub(crate) fn lyapunov_pair(acl: &Mat, q: &Mat, what: &str) -> Result<(Mat, Mat)> {
    let dim = acl.nrows();
    let not_hurwitz = || Error::Domain(format!("{what} closed loop is not Hurwitz"));
    let w = solve_hurwitz(&acl.transpose(), &Mat::identity(dim, dim)).map_err(|_| not_hurwitz())?;
    if w.clone().cholesky().is_none() {
        return Err(not_hurwitz());
    }
    let p = solve_hurwitz(acl, q)?;
    Ok((p, w))
}

/// `P_G` and the closed loop it was computed for.
fn cost_matrix(g: &Parameterizer<'_>, weights: &WeightSpec) -> Result<(Mat, Mat)> {
    check_weights(g.pack, weights)?;
    let acl = g.closed_loop();
    require_hurwitz(&acl, "data")?;
    let ug = &g.pack.ubar * &g.g;
    let rhs = symmetrize(&(weights.qa() + ug.transpose() * weights.r() * &ug));
    let p = solve_lyapunov(&acl, &rhs)?;
    Ok((p, acl))
}

/// `f(G) = tr(P_G)`.
pub fn cost_fg(g: &Parameterizer<'_>, weights: &WeightSpec) -> Result<f64> {
    Ok(cost_matrix(g, weights)?.0.trace())
}

/// Unprojected gradient of `f` at `G`.
pub fn gradient_fg(g: &Parameterizer<'_>, weights: &WeightSpec) -> Result<Mat> {
    Ok(cost_and_gradient(g, weights)?.1)
}

pub(crate) fn cost_and_gradient(g: &Parameterizer<'_>, weights: &WeightSpec) -> Result<(f64, Mat)> {
    let (p, acl) = cost_matrix(g, weights)?;
    let dim = acl.nrows();
    let w = solve_lyapunov(&acl.transpose(), &Mat::identity(dim, dim))?;
    let ubar = &g.pack.ubar;
    let grad = (ubar.transpose() * weights.r() * ubar * &g.g + g.pack.closed_loop_data().transpose() * &p) * w * 2.0;
    Ok((p.trace(), grad))
}

/// `Pi = I - Xbar^+ Xbar`.
pub fn projection_pi(pack: &CovariancePack) -> Result<Mat> {
    let dim = pack.n() + pack.m();
    let pinv = right_pseudoinverse(&pack.xbar)?;
    Ok(symmetrize(&(Mat::identity(dim, dim) - pinv * &pack.xbar)))
}

/// Nearest `G` in Frobenius norm with `Xbar G = [I, 0]`.
pub(crate) fn reproject(g: &Mat, pack: &CovariancePack, xbar_pinv: &Mat) -> Mat {
    g - xbar_pinv * (&pack.xbar * g - Parameterizer::constraint_target(pack))
}

/// Model-side LQR cost `tr(P_K)` for the augmented plant.
pub fn model_cost(k: &Mat, aug: &AugmentedModel, weights: &WeightSpec) -> Result<f64> {
    Ok(model_cost_and_gradient(k, aug, weights)?.0)
}

/// `grad f_K = 2 (R K - Ba^T P_K) W_K`.
pub fn model_based_gradient(k: &Mat, aug: &AugmentedModel, weights: &WeightSpec) -> Result<Mat> {
    Ok(model_cost_and_gradient(k, aug, weights)?.1)
}

pub(crate) fn model_cost_and_gradient(k: &Mat, aug: &AugmentedModel, weights: &WeightSpec) -> Result<(f64, Mat)> {
    let base = &aug.base;
    weights.check_against(base.n(), base.m(), base.p())?;
    ensure_shape(k, base.m(), aug.dim(), "gain")?;
    let acl = aug.closed_loop(k)?;
    let r = weights.r();
    let (p, w) = lyapunov_pair(&acl, &symmetrize(&(weights.qa() + k.transpose() * r * k)), "model")?;
    let grad = (r * k - aug.ba.transpose() * &p) * w * 2.0;
    Ok((p.trace(), grad))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kernels::{mat, solve_care, Vector};
    use crate::lti::{augment, build_covariances, collect_derivative_data, Excitation, LtiModel};
    use crate::param::gain_to_parameterizer;
    use crate::sim::nominal_dgu;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn pack_for(model: &LtiModel, seed: u64) -> CovariancePack {
        let holds = (model.m() + 1) * model.n() + model.m() + 4;
        let exc = Excitation::random(model.m(), holds, 0.1, 1.0, 0.0, seed).unwrap();
        let x0 = Vector::from_element(model.n(), 0.5);
        let batch = collect_derivative_data(model, &exc, 0.1, holds, &x0).unwrap();
        build_covariances(&batch).unwrap()
    }

    /// Random plant with `A` shifted stable so that `K = 0` plus a small
    /// integral gain stabilizes the augmented loop.
    pub(crate) fn random_plant(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> LtiModel {
        loop {
            let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)) - Mat::identity(n, n) * 2.5;
            let b = Mat::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let c = Mat::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
            let model = LtiModel::new(a, b, c).unwrap();
            if crate::lti::check_aug_stabilizable(&model).unwrap().ok {
                return model;
            }
        }
    }

    /// Kronecker oracle for `A^T P + P A + Q = 0`, independent of the kernel.
    fn kron_lyap(a: &Mat, q: &Mat) -> Mat {
        let n = a.nrows();
        let eye = Mat::identity(n, n);
        let op = eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye);
        let rhs = -Vector::from_column_slice(q.as_slice());
        let v = op.full_piv_lu().solve(&rhs).unwrap();
        Mat::from_column_slice(n, n, v.as_slice())
    }

    fn dgu_weights() -> WeightSpec {
        WeightSpec::new(Mat::identity(2, 2), mat(&[&[100.0]]), mat(&[&[1.0]])).unwrap()
    }

    #[test]
    fn data_cost_equals_model_cost() {
        let model = nominal_dgu();
        let pack = pack_for(&model, 1);
        let aug = augment(&model);
        let w = dgu_weights();
        for k in [
            mat(&[&[0.5, 0.1, -50.0]]),
            mat(&[&[5.0, 1.0, -15.0]]),
            mat(&[&[0.0, 0.0, -1.0]]),
        ] {
            let g = gain_to_parameterizer(&k, &pack).unwrap();
            let fg = cost_fg(&g, &w).unwrap();
            let fk = model_cost(&k, &aug, &w).unwrap();
            assert!((fg - fk).abs() <= 1e-9 * fk.abs().max(1.0), "{fg} vs {fk}");
        }
    }

    #[test]
    fn scalar_cost_against_kronecker_oracle() {
        let model = LtiModel::new(mat(&[&[-1.0]]), mat(&[&[1.0]]), mat(&[&[1.0]])).unwrap();
        let pack = pack_for(&model, 2);
        let w = WeightSpec::new(mat(&[&[1.0]]), mat(&[&[1.0]]), mat(&[&[1.0]])).unwrap();
        let k = mat(&[&[0.0, -0.7]]);
        let g = gain_to_parameterizer(&k, &pack).unwrap();
        let acl = mat(&[&[-1.0, 0.7], &[-1.0, 0.0]]);
        let p = kron_lyap(&acl, &(Mat::identity(2, 2) + k.transpose() * &k));
        assert!((cost_fg(&g, &w).unwrap() - p.trace()).abs() <= 1e-9 * p.trace());
    }

    #[test]
    fn cost_at_optimum_is_care_trace() {
        let model = nominal_dgu();
        let pack = pack_for(&model, 3);
        let aug = augment(&model);
        let w = dgu_weights();
        let care = solve_care(&aug.aa, &aug.ba, &w.qa(), w.r()).unwrap();
        let g = gain_to_parameterizer(&care.k, &pack).unwrap();
        let fg = cost_fg(&g, &w).unwrap();
        assert!((fg - care.p.trace()).abs() <= 1e-9 * care.p.trace());
        let pi = projection_pi(&pack).unwrap();
        let tangential = &pi * gradient_fg(&g, &w).unwrap();
        assert!(tangential.norm() <= 1e-7, "{tangential}");
        assert!(model_based_gradient(&care.k, &aug, &w).unwrap().norm() <= 1e-8);
    }

    #[test]
    fn projection_properties() {
        let model = nominal_dgu();
        let pack = pack_for(&model, 4);
        let pi = projection_pi(&pack).unwrap();
        assert!((&pi * &pi - &pi).norm() <= 1e-10);
        assert!((&pack.xbar * &pi).norm() <= 1e-10 * pack.xbar.norm());
        assert!((pi.trace() - 1.0).abs() <= 1e-10);
        for l in pi.symmetric_eigenvalues().iter() {
            assert!(l.abs() < 1e-10 || (l - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_of_orthonormal_rows() {
        let xbar = mat(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let pack = CovariancePack::new(xbar, mat(&[&[0.0, 0.0, 1.0]]), Mat::zeros(2, 3), Mat::zeros(1, 3), 3).unwrap();
        let pi = projection_pi(&pack).unwrap();
        assert!((pi - Mat::from_diagonal(&Vector::from_vec(vec![0.0, 0.0, 1.0]))).norm() < 1e-14);
    }

    /// Central and five-point differences along a tangent direction, best
    /// over a sweep of h from 1e-4 down to 1e-7. Along tangent directions
    /// `f(G) = tr(P_K)` for `K = -Ubar G`, so the differenced cost is the
    /// model-side one, which avoids the cancellation in `Xi G` for large `G`.
    pub(crate) fn fd_error(g: &Parameterizer<'_>, w: &WeightSpec, dir: &Mat, aug: &AugmentedModel) -> f64 {
        let analytic = (gradient_fg(g, w).unwrap().transpose() * dir).trace();
        let f = |s: f64| model_cost(&-(&g.pack.ubar * (&g.g + dir * s)), aug, w).unwrap();
        let mut best = f64::INFINITY;
        for h in [1e-4, 5e-5, 2e-5, 1e-5, 5e-6, 2e-6, 1e-6, 1e-7] {
            let (p1, m1, p2, m2) = (f(h), f(-h), f(2.0 * h), f(-2.0 * h));
            let central = (p1 - m1) / (2.0 * h);
            let five = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            for fd in [central, five] {
                best = best.min((fd - analytic).abs() / analytic.abs().max(1e-12));
            }
        }
        best
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for plant in 0..5 {
            let (n, m) = [(1, 1), (2, 1), (2, 2), (3, 1), (3, 2)][plant];
            let model = random_plant(&mut rng, n, m, 1);
            let pack = pack_for(&model, 100 + plant as u64);
            let pi = projection_pi(&pack).unwrap();
            let w = WeightSpec::new(Mat::identity(n, n), mat(&[&[2.0]]), Mat::identity(m, m)).unwrap();
            let aug = augment(&model);
            let k_star = solve_care(&aug.aa, &aug.ba, &w.qa(), w.r()).unwrap().k;
            for _ in 0..4 {
                let k = &k_star + Mat::from_fn(m, n + 1, |_, _| rng.random_range(-0.3..0.3));
                if !crate::kernels::is_hurwitz(&aug.closed_loop(&k).unwrap()).unwrap() {
                    continue;
                }
                let g = gain_to_parameterizer(&k, &pack).unwrap();
                let raw = Mat::from_fn(n + m, n + 1, |_, _| rng.random_range(-1.0..1.0));
                let dir = &pi * raw;
                let dir = &dir / dir.norm();
                let err = fd_error(&g, &w, &dir, &aug);
                assert!(err <= 1e-5, "plant {plant}: relative error {err}");
            }
        }
    }

    #[test]
    fn model_gradient_gives_descent() {
        let model = nominal_dgu();
        let aug = augment(&model);
        let w = dgu_weights();
        let k = mat(&[&[5.0, 1.0, -15.0]]);
        let (f0, grad) = model_cost_and_gradient(&k, &aug, &w).unwrap();
        let f1 = model_cost(&(&k - &grad * (1e-4 / grad.norm())), &aug, &w).unwrap();
        assert!(f1 < f0);
    }

    #[test]
    fn scalar_model_gradient_against_kronecker_differences() {
        // cost oracle: Kronecker solve of the 2x2 augmented Lyapunov equation
        let model = LtiModel::new(mat(&[&[-1.0]]), mat(&[&[1.0]]), mat(&[&[1.0]])).unwrap();
        let aug = augment(&model);
        let w = WeightSpec::new(mat(&[&[1.0]]), mat(&[&[1.0]]), mat(&[&[1.0]])).unwrap();
        let oracle = |k: &Mat| {
            let acl = mat(&[&[-1.0 - k[(0, 0)], -k[(0, 1)]], &[-1.0, 0.0]]);
            kron_lyap(&acl, &(Mat::identity(2, 2) + k.transpose() * k)).trace()
        };
        let k = mat(&[&[0.8, -0.6]]);
        let grad = model_based_gradient(&k, &aug, &w).unwrap();
        for j in 0..2 {
            let h = 1e-6;
            let mut kp = k.clone();
            kp[(0, j)] += h;
            let mut km = k.clone();
            km[(0, j)] -= h;
            let fd = (oracle(&kp) - oracle(&km)) / (2.0 * h);
            assert!(
                (fd - grad[(0, j)]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "{fd} vs {}",
                grad[(0, j)]
            );
        }
    }

    #[test]
    fn non_hurwitz_is_domain_error() {
        let model = nominal_dgu();
        let pack = pack_for(&model, 6);
        let g = gain_to_parameterizer(&mat(&[&[-5.0, -3.0, 0.0]]), &pack).unwrap();
        assert!(matches!(cost_fg(&g, &dgu_weights()), Err(Error::Domain(_))));
        let aug = augment(&model);
        assert!(matches!(
            model_based_gradient(&mat(&[&[-5.0, -3.0, 0.0]]), &aug, &dgu_weights()),
            Err(Error::Domain(_))
        ));
    }
}
