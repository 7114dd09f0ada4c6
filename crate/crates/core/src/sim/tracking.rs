use super::ReferenceProfile;
use crate::error::{Error, Result};
use crate::flow::{integrate_flow, integrate_model_flow, FlowOptions};
use crate::kernels::{ensure_shape, is_hurwitz, matrix_exponential, Mat, Vector};
use crate::lti::{augment, CovariancePack, LtiModel, WeightSpec};
use crate::param::gain_to_parameterizer;

/// Where the adaptive controller takes its gradient from.
#[derive(Debug, Clone)]
pub enum GradientSource {
    /// Model-based gradient of the plant active at each update.
    Model,
    /// Experimental. Projected data flow on one covariance pack per plant
    /// schedule entry, each recorded on the plant of that entry.
    Data(Vec<CovariancePack>),
}

/// Gain adaptation by a fixed number of flow steps between output samples.
#[derive(Debug, Clone)]
pub struct AdaptiveController {
    pub k0: Mat,
    pub weights: WeightSpec,
    pub alpha: f64,
    pub step: f64,
    pub steps_per_sample: usize,
    pub source: GradientSource,
}

#[derive(Debug, Clone)]
pub enum Controller {
    Fixed(Mat),
    Adaptive(AdaptiveController),
}

impl Controller {
    pub fn initial_gain(&self) -> &Mat {
        match self {
            Controller::Fixed(k) => k,
            Controller::Adaptive(a) => &a.k0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum InitialCondition {
    State {
        x: Vector,
        z: Vector,
    },
    /// Steady state of the first plant under the initial gain and the
    /// reference at the start time. Needs as many inputs as outputs.
    Equilibrium,
}

/// Closed-loop tracking experiment over `[start, start + horizon]`.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// `(switch time, plant)`; the first entry is at `t = 0`.
    pub plants: Vec<(f64, LtiModel)>,
    pub reference: ReferenceProfile,
    pub controller: Controller,
    pub start: f64,
    pub horizon: f64,
    pub output_dt: f64,
    pub initial: InitialCondition,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let Some((t0, first)) = self.plants.first() else {
            return Err(Error::Input("plant schedule is empty".into()));
        };
        if *t0 != 0.0 {
            return Err(Error::Input(format!("first plant must start at t = 0, got {t0}")));
        }
        let (n, m, p) = (first.n(), first.m(), first.p());
        for (i, (t, plant)) in self.plants.iter().enumerate() {
            if i > 0 && !(*t > self.plants[i - 1].0 && t.is_finite()) {
                return Err(Error::Input("plant schedule times must increase strictly".into()));
            }
            if (plant.n(), plant.m(), plant.p()) != (n, m, p) {
                return Err(Error::Input("all scheduled plants must share dimensions".into()));
            }
        }
        if self.reference.dim() != p {
            return Err(Error::dim("reference", p, self.reference.dim()));
        }
        ensure_shape(self.controller.initial_gain(), m, n + p, "gain")?;
        for (name, v) in [("horizon", self.horizon), ("output_dt", self.output_dt)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Input(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.start.is_finite() && self.start >= 0.0) {
            return Err(Error::Input(format!(
                "start time must be nonnegative, got {}",
                self.start
            )));
        }
        if let InitialCondition::State { x, z } = &self.initial {
            if x.len() != n || z.len() != p {
                return Err(Error::dim(
                    "initial state",
                    format!("{n} + {p}"),
                    format!("{} + {}", x.len(), z.len()),
                ));
            }
        }
        if let Controller::Adaptive(a) = &self.controller {
            if !(a.alpha > 0.0 && a.step > 0.0 && a.steps_per_sample > 0) {
                return Err(Error::Input(
                    "adaptive controller needs positive alpha, step and step count".into(),
                ));
            }
            if let GradientSource::Data(packs) = &a.source {
                if packs.len() != self.plants.len() {
                    return Err(Error::Input(format!(
                        "data-driven adaptation needs one pack per scheduled plant ({} given, {} plants)",
                        packs.len(),
                        self.plants.len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn plant_index(&self, t: f64) -> usize {
        self.plants.partition_point(|(pt, _)| *pt <= t).saturating_sub(1)
    }

    pub fn plant_at(&self, t: f64) -> &LtiModel {
        &self.plants[self.plant_index(t)].1
    }

    pub fn end(&self) -> f64 {
        self.start + self.horizon
    }

    /// Plant switches and reference changes strictly inside the run.
    pub fn events(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .plants
            .iter()
            .map(|(t, _)| *t)
            .chain(self.reference.breakpoints().iter().map(|(t, _)| *t))
            .filter(|t| *t > self.start && *t < self.end())
            .collect();
        ev.sort_by(f64::total_cmp);
        ev.dedup();
        ev
    }
}

#[derive(Debug, Clone)]
pub struct TrackingSample {
    pub t: f64,
    pub x: Vector,
    pub z: Vector,
    pub u: Vector,
    pub y: Vector,
    pub r: Vector,
    /// Gain applied from this sample on.
    pub k: Mat,
}

#[derive(Debug, Clone)]
pub struct TrackingRecord {
    pub samples: Vec<TrackingSample>,
    /// Some constant segment ran with a non-Hurwitz closed loop.
    pub unstable_segment: bool,
    /// The state left the floating-point range and the run was cut short.
    pub blew_up: bool,
    /// Adaptive updates skipped because the flow could not be evaluated.
    pub adaptation_failures: usize,
}

impl TrackingRecord {
    pub fn last(&self) -> &TrackingSample {
        self.samples.last().expect("record holds the initial sample")
    }
}

/// `[x; z]` equilibrium of `plant` under `k` for the constant reference `r`.
pub fn equilibrium(plant: &LtiModel, k: &Mat, r: &Vector) -> Result<(Vector, Vector)> {
    let aug = augment(plant);
    let acl = aug.closed_loop(k)?;
    let rhs = -(aug.reference_input() * r);
    let s = acl
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("closed loop at the equilibrium"))?;
    let n = plant.n();
    Ok((s.rows(0, n).into_owned(), s.rows(n, plant.p()).into_owned()))
}

/// Time tolerance for matching events to the output grid.
fn grid_tol(dt: f64) -> f64 {
    1e-9 * dt
}

/// Simulate the augmented closed loop `s' = (Aa - Ba K) s + [0; I] r` with
/// `s = [x; z]` and `u = -K s`, exactly between breakpoints.
pub fn simulate_lqi(scenario: &Scenario) -> Result<TrackingRecord> {
    scenario.validate()?;
    let first = &scenario.plants[0].1;
    let (n, p) = (first.n(), first.p());
    let dim = n + p;
    let mut k = scenario.controller.initial_gain().clone();
    let (x0, z0) = match &scenario.initial {
        InitialCondition::State { x, z } => (x.clone(), z.clone()),
        InitialCondition::Equilibrium => {
            let plant = scenario.plant_at(scenario.start);
            equilibrium(plant, &k, scenario.reference.value_at(scenario.start))?
        }
    };
    let mut s = Vector::zeros(dim);
    s.rows_mut(0, n).copy_from(&x0);
    s.rows_mut(n, p).copy_from(&z0);

    let dt = scenario.output_dt;
    let tol = grid_tol(dt);
    let steps = (scenario.horizon / dt - 1e-9).ceil() as usize;
    let events = scenario.events();
    let time = |j: usize| (scenario.start + j as f64 * dt).min(scenario.end());

    let record_sample = |t: f64, s: &Vector, k: &Mat| {
        let plant = scenario.plant_at(t + tol);
        let x = s.rows(0, n).into_owned();
        TrackingSample {
            t,
            u: -(k * s),
            y: plant.c() * &x,
            x,
            z: s.rows(n, p).into_owned(),
            r: scenario.reference.value_at(t + tol).clone(),
            k: k.clone(),
        }
    };

    let mut record = TrackingRecord {
        samples: vec![record_sample(scenario.start, &s, &k)],
        unstable_segment: false,
        blew_up: false,
        adaptation_failures: 0,
    };
    let mut checked: Option<(usize, Mat)> = None;
    for j in 0..steps {
        let (a, b) = (time(j), time(j + 1));
        let mut knots = vec![a];
        knots.extend(events.iter().copied().filter(|e| *e > a + tol && *e < b - tol));
        knots.push(b);
        for w in knots.windows(2) {
            let (c, d) = (w[0], w[1]);
            let mid = 0.5 * (c + d);
            let idx = scenario.plant_index(mid);
            let aug = augment(&scenario.plants[idx].1);
            let acl = aug.closed_loop(&k)?;
            if checked.as_ref().is_none_or(|(i, kk)| *i != idx || *kk != k) {
                if !is_hurwitz(&acl)? {
                    record.unstable_segment = true;
                }
                checked = Some((idx, k.clone()));
            }
            let forcing = aug.reference_input() * scenario.reference.value_at(mid);
            let mut gen = Mat::zeros(dim + 1, dim + 1);
            gen.view_mut((0, 0), (dim, dim)).copy_from(&acl);
            gen.view_mut((0, dim), (dim, 1)).copy_from(&forcing);
            let e = matrix_exponential(&gen, d - c)?;
            s = e.view((0, 0), (dim, dim)) * &s + e.view((0, dim), (dim, 1));
        }
        if !s.iter().all(|v| v.is_finite() && v.abs() < 1e150) {
            record.blew_up = true;
            break;
        }
        if let Controller::Adaptive(ctrl) = &scenario.controller {
            let next_mid = (b + 0.5 * dt).min(scenario.end());
            match adapt(ctrl, scenario, &k, next_mid) {
                Some(next) => k = next,
                None => record.adaptation_failures += 1,
            }
        }
        record.samples.push(record_sample(b, &s, &k));
    }
    Ok(record)
}

fn adapt(ctrl: &AdaptiveController, scenario: &Scenario, k: &Mat, t: f64) -> Option<Mat> {
    let idx = scenario.plant_index(t);
    let opts = FlowOptions {
        alpha: ctrl.alpha,
        step: ctrl.step,
        horizon: ctrl.step * ctrl.steps_per_sample as f64,
        grad_tol: f64::MIN_POSITIVE,
        record_every: ctrl.steps_per_sample,
        ..FlowOptions::default()
    };
    let traj = match &ctrl.source {
        GradientSource::Model => integrate_model_flow(k, &augment(&scenario.plants[idx].1), &ctrl.weights, &opts),
        GradientSource::Data(packs) => {
            gain_to_parameterizer(k, &packs[idx]).and_then(|g| integrate_flow(&g, &ctrl.weights, &opts))
        }
    };
    traj.ok().map(|t| t.final_gain().clone())
}

/// Peak output deviation within one constant-plant, constant-reference segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMetric {
    pub start: f64,
    pub end: f64,
    /// Output equilibrium for the segment's plant, final gain and reference.
    pub target: Vector,
    /// `max_t ||y(t) - target||_inf` over the segment.
    pub peak_deviation: f64,
    /// Largest excursion past `target` on the side opposite to the one the
    /// output settles from: the starting side after a reference step, the
    /// side of the first excursion when the segment starts on target.
    pub overshoot: f64,
    /// `||y(end) - target||_inf`.
    pub final_error: f64,
}

/// Per-segment metrics, split at the scenario's events.
pub fn segment_metrics(scenario: &Scenario, record: &TrackingRecord) -> Result<Vec<SegmentMetric>> {
    let tol = grid_tol(scenario.output_dt);
    let mut bounds = vec![scenario.start];
    bounds.extend(scenario.events());
    bounds.push(record.last().t);
    let mut out = Vec::new();
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a + tol {
            continue;
        }
        let seg: Vec<&TrackingSample> = record
            .samples
            .iter()
            .filter(|s| s.t >= a - tol && s.t <= b + tol)
            .collect();
        let Some(last) = seg.last() else {
            continue;
        };
        let mid = 0.5 * (a + b);
        let plant = scenario.plant_at(mid);
        // the gain in force just before the segment ends
        let k = &seg[seg.len().saturating_sub(2)].k;
        let (x_eq, _) = equilibrium(plant, k, scenario.reference.value_at(mid))?;
        let target = plant.c() * x_eq;
        let dev = |s: &TrackingSample| (&s.y - &target).amax();
        let peak_deviation = seg.iter().map(|s| dev(s)).fold(0.0, f64::max);
        let mut overshoot = 0.0f64;
        for i in 0..target.len() {
            let errors: Vec<f64> = seg.iter().map(|s| s.y[i] - target[i]).collect();
            let peak = errors.iter().fold(0.0f64, |a, e| a.max(e.abs()));
            let floor = 1e-3 * peak;
            // side from which the output settles: the starting side after a
            // reference step, the side of the first excursion after a disturbance
            let side = if errors[0].abs() > floor {
                errors[0].signum()
            } else {
                errors.iter().find(|e| e.abs() > floor).map_or(0.0, |e| e.signum())
            };
            for e in &errors {
                overshoot = overshoot.max(-side * e);
            }
        }
        out.push(SegmentMetric {
            start: a,
            end: b,
            final_error: dev(last),
            target,
            peak_deviation,
            overshoot,
        });
    }
    Ok(out)
}
