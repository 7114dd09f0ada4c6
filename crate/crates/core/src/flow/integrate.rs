use std::cell::RefCell;

use super::{lyapunov_pair, model_cost_and_gradient, reproject};
use crate::error::{Error, Result};
use crate::kernels::{right_pseudoinverse, row_space_split, symmetrize, Mat};
use crate::lti::{AugmentedModel, CovariancePack, WeightSpec};
use crate::param::{Parameterizer, CONSTRUCTION_TOL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Learning rate. Only rescales flow time.
    pub alpha: f64,
    /// Nominal RK4 step in flow time.
    pub step: f64,
    pub horizon: f64,
    /// Stop once `||Pi grad f||_F` falls below this.
    pub grad_tol: f64,
    /// Steps between exact re-projections onto `Xbar G = [I, 0]`.
    pub constraint_renorm_every: usize,
    /// Keep every `record_every`-th accepted step in the trajectory.
    pub record_every: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            step: 1e-3,
            horizon: 10.0,
            grad_tol: 1e-8,
            constraint_renorm_every: 25,
            record_every: 1,
        }
    }
}

impl FlowOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("step", self.step),
            ("horizon", self.horizon),
            ("grad_tol", self.grad_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Input(format!("flow option {name} must be positive, got {v}")));
            }
        }
        if self.constraint_renorm_every == 0 || self.record_every == 0 {
            return Err(Error::Input("flow step counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStop {
    Converged,
    Horizon,
}

#[derive(Debug, Clone)]
pub struct FlowSample {
    pub t: f64,
    /// Parameterizer; equals the gain for model-side flows.
    pub g: Mat,
    pub k: Mat,
    pub cost: f64,
    /// `||Pi grad f||_F`, or `||grad f_K||_F` for model-side flows.
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub samples: Vec<FlowSample>,
    pub stop: FlowStop,
    pub steps: usize,
    /// Rejected steps that were retried at half size.
    pub halvings: usize,
}

impl FlowTrajectory {
    pub fn last(&self) -> &FlowSample {
        self.samples.last().expect("trajectory holds the initial sample")
    }

    pub fn final_gain(&self) -> &Mat {
        &self.last().k
    }

    /// `||K(t) - K*||_F / ||K(0) - K*||_F` per sample.
    pub fn residual_ratios(&self, k_star: &Mat) -> Vec<f64> {
        let base = (&self.samples[0].k - k_star).norm();
        self.samples
            .iter()
            .map(|s| {
                let r = (&s.k - k_star).norm();
                if base > 0.0 {
                    r / base
                } else {
                    r
                }
            })
            .collect()
    }
}

struct Eval {
    cost: f64,
    velocity: Mat,
    grad_norm: f64,
}

/// Decrease relative to `max(1, |cost|)` tolerated as integrator noise.
const COST_SLACK: f64 = 1e-10;
/// Halvings allowed below the nominal step before giving up.
const MAX_HALVINGS: i32 = 50;
/// Largest accepted `||k4 - k1|| / ||k1||` across one RK4 step. Larger
/// variation means the step has left the region where the velocity is
/// close to linear and the discrete path can stray from the flow.
const MAX_VARIATION: f64 = 0.5;
/// Consecutive accepted steps before a halved step is doubled again.
const REGROW_AFTER: usize = 8;

fn descend(
    x0: Mat,
    opts: &FlowOptions,
    eval: impl Fn(&Mat) -> Result<Eval>,
    post_step: impl Fn(Mat, usize) -> Mat,
    describe: impl Fn(&Mat) -> (Mat, Mat),
) -> Result<FlowTrajectory> {
    opts.validate()?;
    let mut x = x0;
    let mut cur = eval(&x)?;
    let sample = |t: f64, x: &Mat, e: &Eval| {
        let (g, k) = describe(x);
        FlowSample {
            t,
            g,
            k,
            cost: e.cost,
            grad_norm: e.grad_norm,
        }
    };
    let mut samples = vec![sample(0.0, &x, &cur)];
    let (mut t, mut h, mut steps, mut halvings, mut streak) = (0.0, opts.step, 0usize, 0usize, 0usize);
    let min_step = opts.step * 2f64.powi(-MAX_HALVINGS);
    let end = opts.horizon * (1.0 - 1e-12);
    let stop = loop {
        if cur.grad_norm <= opts.grad_tol {
            break FlowStop::Converged;
        }
        if t >= end {
            break FlowStop::Horizon;
        }
        let h_try = h.min(opts.horizon - t);
        // None: step rejected before the final evaluation
        let attempt = (|| -> Result<Option<(Mat, Eval)>> {
            let k1 = &cur.velocity;
            let k2 = eval(&(&x + k1 * (h_try / 2.0)))?.velocity;
            let k3 = eval(&(&x + &k2 * (h_try / 2.0)))?.velocity;
            let k4 = eval(&(&x + &k3 * h_try))?.velocity;
            if (&k4 - k1).norm() > MAX_VARIATION * k1.norm() {
                return Ok(None);
            }
            let next = &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h_try / 6.0);
            let next = post_step(next, steps + 1);
            let e = eval(&next)?;
            Ok(Some((next, e)))
        })();
        match attempt {
            Ok(Some((next, e))) if e.cost - cur.cost <= COST_SLACK * cur.cost.abs().max(1.0) => {
                x = next;
                cur = e;
                t += h_try;
                steps += 1;
                streak += 1;
                if streak >= REGROW_AFTER && h < opts.step {
                    h = (h * 2.0).min(opts.step);
                    streak = 0;
                }
                if steps % opts.record_every == 0 {
                    samples.push(sample(t, &x, &cur));
                }
            }
            _ => {
                h /= 2.0;
                halvings += 1;
                streak = 0;
                if h < min_step {
                    return Err(Error::StepUnderflow { t, step: h });
                }
            }
        }
    };
    if samples.last().is_some_and(|s| s.t < t) {
        samples.push(sample(t, &x, &cur));
    }
    Ok(FlowTrajectory {
        samples,
        stop,
        steps,
        halvings,
    })
}

/// Affine anchor of the tangent coordinates `G = G0 + N Y`.
struct Anchor {
    g0: Mat,
    acl0: Mat,
    ug0: Mat,
}

/// The flow in tangent coordinates `G = G0 + N Y`, where the columns of `N`
/// are an orthonormal basis of `ker Xbar`. Since `Pi = N N^T`, the flow
/// `dY/dt = -alpha N^T grad f` is the projected flow, and `Xbar G` stays at
/// its anchor value up to rounding. The products `Xi G0`, `Xi N`, `Ubar G0`
/// and `Ubar N` are formed once per anchor, so the cancellation inherent in
/// a large `G` does not enter every evaluation.
struct DataFlow<'a> {
    pack: &'a CovariancePack,
    weights: &'a WeightSpec,
    basis: Mat,
    acl_dir: Mat,
    ug_dir: Mat,
    anchor: RefCell<Anchor>,
    alpha: f64,
}

impl<'a> DataFlow<'a> {
    fn new(g0: &Parameterizer<'a>, weights: &'a WeightSpec, alpha: f64) -> Result<Self> {
        let pack = g0.pack;
        weights.check_against(pack.n(), pack.m(), pack.p())?;
        // full row rank of Xbar, reported as a rank error otherwise
        right_pseudoinverse(&pack.xbar)?;
        let (_, basis) = row_space_split(&pack.xbar);
        let xi = pack.closed_loop_data();
        let flow = Self {
            pack,
            weights,
            acl_dir: &xi * &basis,
            ug_dir: &pack.ubar * &basis,
            basis,
            anchor: RefCell::new(Anchor {
                g0: Mat::zeros(0, 0),
                acl0: Mat::zeros(0, 0),
                ug0: Mat::zeros(0, 0),
            }),
            alpha,
        };
        flow.set_anchor(g0.g.clone());
        Ok(flow)
    }

    fn set_anchor(&self, g0: Mat) {
        *self.anchor.borrow_mut() = Anchor {
            acl0: self.pack.closed_loop_data() * &g0,
            ug0: &self.pack.ubar * &g0,
            g0,
        };
    }

    fn parameterizer(&self, y: &Mat) -> Mat {
        &self.anchor.borrow().g0 + &self.basis * y
    }

    fn gain(&self, y: &Mat) -> Mat {
        -(&self.anchor.borrow().ug0 + &self.ug_dir * y)
    }

    fn eval(&self, y: &Mat) -> Result<Eval> {
        let (acl, ug) = {
            let a = self.anchor.borrow();
            (&a.acl0 + &self.acl_dir * y, &a.ug0 + &self.ug_dir * y)
        };
        let r = self.weights.r();
        let (p, w) = lyapunov_pair(
            &acl,
            &symmetrize(&(self.weights.qa() + ug.transpose() * r * &ug)),
            "data",
        )?;
        // N^T grad f = 2 (N^T Ubar^T R Ubar G + N^T Xi^T P) W
        let tangent = (self.ug_dir.transpose() * r * ug + self.acl_dir.transpose() * &p) * w * 2.0;
        Ok(Eval {
            cost: p.trace(),
            grad_norm: tangent.norm(),
            velocity: tangent * -self.alpha,
        })
    }

    /// Audit `Xbar G = [I, 0]`; on drift, re-project `G` and re-anchor at it.
    fn audit(&self, y: Mat, pinv: &Mat) -> Mat {
        let g = self.parameterizer(&y);
        let residual = (&self.pack.xbar * &g - Parameterizer::constraint_target(self.pack)).norm();
        if residual <= CONSTRUCTION_TOL {
            return y;
        }
        self.set_anchor(reproject(&g, self.pack, pinv));
        Mat::zeros(y.nrows(), y.ncols())
    }
}

/// Integrate `dG/dt = -alpha Pi grad f(G)` from `g0` with RK4.
///
/// Every `constraint_renorm_every` steps the current `G` is checked against
/// `Xbar G = [I, 0]` and re-projected onto it if the residual exceeds the
/// construction tolerance.
pub fn integrate_flow(g0: &Parameterizer<'_>, weights: &WeightSpec, opts: &FlowOptions) -> Result<FlowTrajectory> {
    if !g0.is_in_g_set() {
        return Err(Error::Domain(
            "initial parameterizer is outside the stabilizing set: constraint violated or closed loop not Hurwitz"
                .into(),
        ));
    }
    let flow = DataFlow::new(g0, weights, opts.alpha)?;
    let pinv = right_pseudoinverse(&g0.pack.xbar)?;
    let every = opts.constraint_renorm_every;
    descend(
        Mat::zeros(g0.pack.m(), g0.g.ncols()),
        opts,
        |y| flow.eval(y),
        |y, step| {
            if step % every == 0 {
                flow.audit(y, &pinv)
            } else {
                y
            }
        },
        |y| (flow.parameterizer(y), flow.gain(y)),
    )
}

/// [`integrate_flow`] with the rate re-estimated from the local curvature
/// every `segment_steps` accepted steps. `opts.alpha` is ignored. Since the
/// rate only rescales time, the path is that of the projected flow; sample
/// times are reported in the time of the flow with unit rate, and
/// `opts.horizon` bounds the sum of the steps.
pub fn integrate_flow_rescaled(
    g0: &Parameterizer<'_>,
    weights: &WeightSpec,
    opts: &FlowOptions,
    segment_steps: usize,
) -> Result<FlowTrajectory> {
    if segment_steps == 0 {
        return Err(Error::Input("segment length must be positive".into()));
    }
    opts.validate()?;
    let pack = g0.pack;
    let mut g = g0.g.clone();
    let mut out: Option<FlowTrajectory> = None;
    let (mut t_unit, mut budget) = (0.0, opts.horizon);
    loop {
        let start = Parameterizer::new(g.clone(), pack)?;
        let alpha = suggest_step(&start, weights, 1.0)?;
        let seg_opts = FlowOptions {
            alpha,
            horizon: budget.min(opts.step * segment_steps as f64),
            ..*opts
        };
        let seg = integrate_flow(&start, weights, &seg_opts)?;
        let seg_len = seg.last().t;
        budget -= seg_len;
        let shift = |mut s: FlowSample| {
            s.t = t_unit + alpha * s.t;
            s
        };
        let done = seg.stop == FlowStop::Converged || budget <= opts.horizon * 1e-12;
        g = seg.last().g.clone();
        match out.as_mut() {
            None => {
                out = Some(FlowTrajectory {
                    samples: seg.samples.into_iter().map(shift).collect(),
                    ..seg
                })
            }
            Some(acc) => {
                acc.samples.extend(seg.samples.into_iter().skip(1).map(shift));
                acc.steps += seg.steps;
                acc.halvings += seg.halvings;
                acc.stop = seg.stop;
            }
        }
        t_unit += alpha * seg_len;
        if done {
            return Ok(out.expect("at least one segment ran"));
        }
    }
}

/// Integrate `dK/dt = -alpha grad f_K` on the known augmented model.
pub fn integrate_model_flow(
    k0: &Mat,
    aug: &AugmentedModel,
    weights: &WeightSpec,
    opts: &FlowOptions,
) -> Result<FlowTrajectory> {
    let alpha = opts.alpha;
    descend(
        k0.clone(),
        opts,
        |k| {
            let (cost, grad) = model_cost_and_gradient(k, aug, weights)?;
            Ok(Eval {
                cost,
                grad_norm: grad.norm(),
                velocity: grad * -alpha,
            })
        },
        |k, _| k,
        |k| (k.clone(), k.clone()),
    )
}

/// Power iteration on finite differences of `velocity`, which must be
/// `-grad f` at `x0 + y` in some coordinates `y`. Returns the estimated
/// largest curvature.
fn curvature(velocity: impl Fn(&Mat) -> Result<Eval>, shape: (usize, usize), scale: f64) -> Result<f64> {
    let y0 = Mat::zeros(shape.0, shape.1);
    let base = velocity(&y0)?;
    let mut v = if base.grad_norm > 0.0 {
        &base.velocity / base.grad_norm
    } else {
        Mat::from_element(shape.0, shape.1, 1.0 / ((shape.0 * shape.1) as f64).sqrt())
    };
    let eps = 1e-6 * (1.0 + scale);
    let mut curvature = 0.0;
    for _ in 0..12 {
        let plus = velocity(&(&v * eps))?.velocity;
        let minus = velocity(&(&v * -eps))?.velocity;
        let hv = (minus - plus) / (2.0 * eps);
        curvature = hv.norm();
        if curvature == 0.0 {
            break;
        }
        v = hv / curvature;
    }
    if !(curvature.is_finite() && curvature > 0.0) {
        return Err(Error::Numerical {
            what: "curvature estimate for the flow step",
            iterations: 12,
        });
    }
    Ok(curvature)
}

/// Step of order `1 / (alpha L)`, with `L` a power-iteration estimate of the
/// largest curvature of `f` along the constraint tangent space at `g`.
pub fn suggest_step(g: &Parameterizer<'_>, weights: &WeightSpec, alpha: f64) -> Result<f64> {
    let flow = DataFlow::new(g, weights, 1.0)?;
    let l = curvature(|y| flow.eval(y), (g.pack.m(), g.g.ncols()), g.g.norm())?;
    Ok(1.0 / (alpha * l))
}

/// Model-side counterpart of [`suggest_step`] at the gain `k`.
pub fn suggest_model_step(k: &Mat, aug: &AugmentedModel, weights: &WeightSpec, alpha: f64) -> Result<f64> {
    let l = curvature(
        |dk| {
            let (cost, grad) = model_cost_and_gradient(&(k + dk), aug, weights)?;
            Ok(Eval {
                cost,
                grad_norm: grad.norm(),
                velocity: -grad,
            })
        },
        k.shape(),
        k.norm(),
    )?;
    Ok(1.0 / (alpha * l))
}
