use super::{
    dgu_model, segment_metrics, simulate_lqi, AdaptiveController, Controller, GradientSource, InitialCondition,
    ReferenceProfile, Scenario, SegmentMetric, TrackingRecord, TrackingSample,
};
use crate::error::{Error, Result, StageExt};
use crate::export::fmt_num;
use crate::flow::{integrate_flow, suggest_model_step, suggest_step, FlowOptions, FlowTrajectory};
use crate::kernels::{is_hurwitz, mat, solve_care, Mat, Vector};
use crate::lti::{augment, build_covariances, collect_integral_data, CovariancePack, DataBatch, Excitation, LtiModel};
use crate::lti::{check_aug_detectable, check_aug_stabilizable, WeightSpec};
use crate::param::gain_to_parameterizer;
use crate::sdp::{assemble_sdp, extract_gain, solve_sdp, SdpOptions, SdpSolution};

/// Filter and load parameters of the buck-converter unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DguParams {
    pub resistance: f64,
    pub inductance: f64,
    pub capacitance: f64,
    pub admittance: f64,
}

impl Default for DguParams {
    fn default() -> Self {
        Self {
            resistance: 0.2,
            inductance: 2e-3,
            capacitance: 2e-3,
            admittance: 0.02,
        }
    }
}

impl DguParams {
    pub fn model(&self) -> Result<LtiModel> {
        dgu_model(self.resistance, self.inductance, self.capacitance, self.admittance)
    }

    pub fn with_admittance(&self, admittance: f64) -> Result<LtiModel> {
        dgu_model(self.resistance, self.inductance, self.capacitance, admittance)
    }
}

/// Open-loop experiment with window integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectionPlan {
    pub samples: usize,
    /// Spacing between window starts.
    pub spacing: f64,
    pub window: f64,
    /// Hold time of the random input levels.
    pub hold: f64,
    pub amplitude: f64,
    pub offset: f64,
}

impl Default for CollectionPlan {
    fn default() -> Self {
        Self {
            samples: 10,
            spacing: 0.1,
            window: 0.1,
            hold: 0.02,
            amplitude: 50.0,
            offset: 0.0,
        }
    }
}

impl CollectionPlan {
    /// End of the last window.
    pub fn duration(&self) -> f64 {
        (self.samples.max(1) - 1) as f64 * self.spacing + self.window
    }

    pub fn excitation(&self, inputs: usize, seed: u64) -> Result<Excitation> {
        if !(self.hold > 0.0 && self.hold.is_finite()) {
            return Err(Error::Input(format!("hold time must be positive, got {}", self.hold)));
        }
        let holds = (self.duration() / self.hold - 1e-9).ceil() as usize;
        Excitation::random(inputs, holds.max(1), self.hold, self.amplitude, self.offset, seed)
    }

    pub fn collect(&self, model: &LtiModel, seed: u64, x0: &Vector) -> Result<(Excitation, DataBatch)> {
        let exc = self.excitation(model.m(), seed)?;
        let batch = collect_integral_data(model, &exc, self.spacing, self.window, self.samples, x0)?;
        Ok((exc, batch))
    }
}

/// Options of the full case study.
#[derive(Debug, Clone)]
pub struct ProtocolOptions {
    pub dgu: DguParams,
    pub weights: WeightSpec,
    pub collection: CollectionPlan,
    pub sdp: SdpOptions,
    /// Flow settings for the runs from the listed initial gains. When
    /// `flow_alpha` is `None`, `alpha` is set so that a unit step matches
    /// the curvature of the cost at the synthesized parameterizer.
    pub flow: FlowOptions,
    pub flow_alpha: Option<f64>,
    pub initial_gains: Vec<(String, Mat)>,
    /// Reference during closed-loop tracking, which starts at the end of
    /// the collection.
    pub tracking_reference: Vec<(f64, f64)>,
    pub tracking_end: f64,
    pub output_dt: f64,
    /// `(time, admittance)` schedule of the time-varying load run.
    pub load_schedule: Vec<(f64, f64)>,
    pub load_reference: Vec<(f64, f64)>,
    pub load_horizon: f64,
    pub adaptive_step: f64,
    pub adaptive_steps_per_sample: usize,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            dgu: DguParams::default(),
            weights: WeightSpec::new(Mat::identity(2, 2), mat(&[&[100.0]]), mat(&[&[1.0]]))
                .expect("default weights are valid"),
            collection: CollectionPlan::default(),
            sdp: SdpOptions::default(),
            flow: FlowOptions {
                alpha: 1.0,
                step: 2.0,
                horizon: 3e5,
                grad_tol: 1e-14,
                constraint_renorm_every: 25,
                record_every: 100,
            },
            flow_alpha: None,
            initial_gains: default_initial_gains(),
            tracking_reference: vec![(0.0, 400.0), (2.0, 600.0), (3.0, 200.0)],
            tracking_end: 4.0,
            output_dt: 1e-3,
            load_schedule: vec![(0.0, 0.02), (0.5, 0.001), (2.5, 0.1)],
            load_reference: vec![(0.0, 400.0), (1.5, 410.0)],
            load_horizon: 3.0,
            adaptive_step: 2.0,
            adaptive_steps_per_sample: 25,
        }
    }
}

/// `K1`, `K2` and `K3` of the case study.
pub fn default_initial_gains() -> Vec<(String, Mat)> {
    vec![
        ("k1".into(), mat(&[&[0.5, 0.1, -50.0]])),
        ("k2".into(), mat(&[&[5.0, 1.0, -15.0]])),
        ("k3".into(), mat(&[&[0.0, 0.0, -1.0]])),
    ]
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub label: String,
    pub k0: Mat,
    pub trajectory: FlowTrajectory,
    /// Against the model-based optimum.
    pub residual_ratios: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LoadRun {
    pub label: String,
    pub record: TrackingRecord,
    pub metrics: Vec<SegmentMetric>,
}

#[derive(Debug, Clone)]
pub struct ProtocolBundle {
    pub seed: u64,
    pub model: LtiModel,
    pub batch: DataBatch,
    pub pack: CovariancePack,
    pub sdp: SdpSolution,
    pub k_sdp: Mat,
    /// Optimal gain of the true model.
    pub k_care: Mat,
    /// `||K_SDP - K_CARE||_F`.
    pub gain_gap: f64,
    /// Open-loop collection followed by closed-loop tracking with `K_SDP`.
    pub tracking: TrackingRecord,
    pub tracking_scenario: Scenario,
    pub collection_end: f64,
    pub flow_alpha: f64,
    pub flows: Vec<FlowRun>,
    pub load_scenario: Scenario,
    pub load_runs: Vec<LoadRun>,
}

/// Collect data, synthesize, track, run the flows and the load experiment.
pub fn run_case_study(seed: u64, opts: &ProtocolOptions) -> Result<ProtocolBundle> {
    let model = opts.dgu.model().stage("model")?;
    let weights = &opts.weights;
    check_aug_stabilizable(&model)
        .and_then(|r| {
            r.ok.then_some(())
                .ok_or_else(|| Error::Assumption("augmented pair is not stabilizable".into()))
        })
        .stage("preflight")?;
    check_aug_detectable(&model, weights)
        .and_then(|r| {
            r.ok.then_some(())
                .ok_or_else(|| Error::Assumption("augmented pair is not detectable".into()))
        })
        .stage("preflight")?;

    let x0 = Vector::zeros(model.n());
    let (exc, batch) = opts.collection.collect(&model, seed, &x0).stage("collection")?;
    let pack = build_covariances(&batch).stage("covariances")?;
    let problem = assemble_sdp(&pack, weights).stage("sdp assembly")?;
    let sdp = solve_sdp(&problem, &opts.sdp).stage("sdp")?;
    let k_sdp = extract_gain(&sdp, &pack).stage("gain extraction")?;
    let aug = augment(&model);
    let k_care = solve_care(&aug.aa, &aug.ba, &weights.qa(), weights.r())
        .stage("reference gain")?
        .k;
    let gain_gap = (&k_sdp - &k_care).norm();

    let collection_end = opts.collection.duration();
    let reference = ReferenceProfile::scalar(&opts.tracking_reference).stage("tracking")?;
    let (tracking_scenario, tracking) = track_after_collection(
        &model,
        &exc,
        &k_sdp,
        collection_end,
        reference,
        opts.tracking_end,
        opts.output_dt,
    )
    .stage("tracking")?;

    let g_sdp = gain_to_parameterizer(&k_sdp, &pack).stage("flow setup")?;
    let flow_alpha = match opts.flow_alpha {
        Some(a) => a,
        None => suggest_step(&g_sdp, weights, 1.0).stage("flow setup")?,
    };
    let flow_opts = FlowOptions {
        alpha: flow_alpha,
        ..opts.flow
    };
    let mut flows = Vec::new();
    for (label, k0) in &opts.initial_gains {
        let stage = format!("flow from {label}");
        if !is_hurwitz(&aug.closed_loop(k0).stage(&stage)?).stage(&stage)? {
            return Err(Error::Domain(format!(
                "initial gain {label} does not stabilize the model"
            )))
            .stage(stage);
        }
        let g0 = gain_to_parameterizer(k0, &pack).stage(&stage)?;
        let trajectory = integrate_flow(&g0, weights, &flow_opts).stage(&stage)?;
        flows.push(FlowRun {
            label: label.clone(),
            k0: k0.clone(),
            residual_ratios: trajectory.residual_ratios(&k_care),
            trajectory,
        });
    }

    let (load_scenario, load_runs) = load_experiment(&k_care, opts).stage("load experiment")?;

    Ok(ProtocolBundle {
        seed,
        model,
        batch,
        pack,
        sdp,
        k_sdp,
        k_care,
        gain_gap,
        tracking,
        tracking_scenario,
        collection_end,
        flow_alpha,
        flows,
        load_scenario,
        load_runs,
    })
}

/// Open-loop samples of the experiment from `x = 0` up to
/// `collection_end`, then the closed loop under `k` until `end` from the
/// state reached there with a zero integrator. The returned scenario covers
/// the closed-loop part.
pub fn track_after_collection(
    model: &LtiModel,
    exc: &Excitation,
    k: &Mat,
    collection_end: f64,
    reference: ReferenceProfile,
    end: f64,
    dt: f64,
) -> Result<(Scenario, TrackingRecord)> {
    if !(dt > 0.0 && collection_end > 0.0 && end > collection_end) {
        return Err(Error::Input(format!(
            "need 0 < collection end {collection_end} < end {end} and a positive output step {dt}"
        )));
    }
    let (n, p) = (model.n(), model.p());
    let mut samples = Vec::new();
    let mut x = Vector::zeros(n);
    let open_steps = (collection_end / dt - 1e-9).ceil() as usize;
    let zero_gain = Mat::zeros(model.m(), n + p);
    for j in 0..open_steps {
        let t = j as f64 * dt;
        if j > 0 {
            x = crate::lti::advance(model, exc, &x, (j - 1) as f64 * dt, t)?.0;
        }
        samples.push(TrackingSample {
            t,
            u: exc.value_at(t)?,
            y: model.c() * &x,
            x: x.clone(),
            z: Vector::zeros(p),
            r: reference.value_at(t).clone(),
            k: zero_gain.clone(),
        });
    }
    let last_t = (open_steps - 1) as f64 * dt;
    let x_end = crate::lti::advance(model, exc, &x, last_t, collection_end)?.0;
    let scenario = Scenario {
        plants: vec![(0.0, model.clone())],
        reference,
        controller: Controller::Fixed(k.clone()),
        start: collection_end,
        horizon: end - collection_end,
        output_dt: dt,
        initial: InitialCondition::State {
            x: x_end,
            z: Vector::zeros(p),
        },
    };
    let mut closed = simulate_lqi(&scenario)?;
    samples.append(&mut closed.samples);
    closed.samples = samples;
    Ok((scenario, closed))
}

/// The nominal optimum, each listed initial gain and the adaptive controller
/// under the load schedule, all started at the nominal equilibrium.
fn load_experiment(k_star: &Mat, opts: &ProtocolOptions) -> Result<(Scenario, Vec<LoadRun>)> {
    let plants = opts
        .load_schedule
        .iter()
        .map(|&(t, y)| Ok((t, opts.dgu.with_admittance(y)?)))
        .collect::<Result<Vec<_>>>()?;
    let alpha = suggest_model_step(k_star, &augment(&plants[0].1), &opts.weights, 1.0)?;
    let adaptive = AdaptiveController {
        k0: k_star.clone(),
        weights: opts.weights.clone(),
        alpha,
        step: opts.adaptive_step,
        steps_per_sample: opts.adaptive_steps_per_sample,
        source: GradientSource::Model,
    };
    let base = Scenario {
        plants,
        reference: ReferenceProfile::scalar(&opts.load_reference)?,
        controller: Controller::Fixed(k_star.clone()),
        start: 0.0,
        horizon: opts.load_horizon,
        output_dt: opts.output_dt,
        initial: InitialCondition::Equilibrium,
    };
    let mut controllers = vec![("k_star".to_string(), Controller::Fixed(k_star.clone()))];
    controllers.extend(
        opts.initial_gains
            .iter()
            .map(|(l, k)| (l.clone(), Controller::Fixed(k.clone()))),
    );
    controllers.push(("adaptive".into(), Controller::Adaptive(adaptive)));
    let mut runs = Vec::new();
    for (label, controller) in controllers {
        let scenario = Scenario {
            controller,
            ..base.clone()
        };
        let record = simulate_lqi(&scenario).stage(format!("controller {label}"))?;
        let metrics = segment_metrics(&scenario, &record)?;
        runs.push(LoadRun { label, record, metrics });
    }
    Ok((base, runs))
}

impl ProtocolBundle {
    /// Plain-text report of the run. Contains no timing information.
    pub fn summary(&self) -> String {
        let row = |k: &Mat| k.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        s += &format!("seed {}\n", self.seed);
        s += &format!(
            "collection: {} windows, rank of [Ubar; Xbar] {}\n",
            self.batch.samples(),
            crate::lti::check_pe_rank(&self.pack).rank
        );
        s += &format!(
            "sdp: objective {}, {} outer iterations, gap estimate {}\n",
            fmt_num(self.sdp.objective),
            self.sdp.outer_iterations,
            fmt_num(self.sdp.duality_gap_estimate)
        );
        s += &format!("K_SDP  = [{}]\n", row(&self.k_sdp));
        s += &format!("K_CARE = [{}]\n", row(&self.k_care));
        s += &format!("||K_SDP - K_CARE||_F = {}\n", fmt_num(self.gain_gap));
        s += &format!("flow alpha {}\n", fmt_num(self.flow_alpha));
        for f in &self.flows {
            s += &format!(
                "flow {}: {:?} after {} steps, final residual ratio {}, final gain [{}]\n",
                f.label,
                f.trajectory.stop,
                f.trajectory.steps,
                fmt_num(f.residual_ratios.last().copied().unwrap_or(f64::NAN)),
                row(f.trajectory.final_gain())
            );
        }
        s += "load experiment: controller, segment start, peak deviation, overshoot, final error\n";
        for run in &self.load_runs {
            for m in &run.metrics {
                s += &format!(
                    "  {}, {}, {}, {}, {}\n",
                    run.label,
                    fmt_num(m.start),
                    fmt_num(m.peak_deviation),
                    fmt_num(m.overshoot),
                    fmt_num(m.final_error)
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowStop;
    use crate::kernels::spectral_abscissa;

    #[test]
    fn two_seeds_reproduce_the_reference_gain() {
        for seed in [7, 8] {
            let b = run_case_study(seed, &ProtocolOptions::default()).unwrap();
            assert!(b.gain_gap <= 1e-3, "seed {seed}: {}", b.gain_gap);
            for f in &b.flows {
                assert_eq!(f.trajectory.stop, FlowStop::Converged, "seed {seed} {}", f.label);
                assert!(
                    f.residual_ratios.windows(2).all(|w| w[1] < w[0]),
                    "seed {seed} {}",
                    f.label
                );
                assert!(*f.residual_ratios.last().unwrap() <= 1e-6);
            }
            // the record switches from open loop to feedback at the end of the collection
            let t = &b.tracking.samples;
            assert!((t[1].t - t[0].t - 1e-3).abs() < 1e-12);
            assert!(t.iter().filter(|s| s.t < b.collection_end).all(|s| s.k.norm() == 0.0));
            assert!((b.tracking.last().t - 4.0).abs() < 1e-12);
            assert_eq!(b.load_runs.len(), 5);
        }
    }

    #[test]
    fn rejects_destabilizing_initial_gain() {
        let opts = ProtocolOptions {
            initial_gains: vec![("bad".into(), mat(&[&[-5.0, -3.0, 0.0]]))],
            ..ProtocolOptions::default()
        };
        let aug = augment(&opts.dgu.model().unwrap());
        assert!(spectral_abscissa(&aug.closed_loop(&opts.initial_gains[0].1).unwrap()).unwrap() >= 0.0);
        let err = run_case_study(7, &opts).unwrap_err();
        assert!(
            matches!(err, Error::Stage { ref stage, .. } if stage == "flow from bad"),
            "{err}"
        );
        assert!(matches!(err.root(), Error::Domain(_)));
    }

    #[test]
    fn zero_excitation_fails_at_a_labelled_stage() {
        let opts = ProtocolOptions {
            collection: CollectionPlan {
                amplitude: 0.0,
                ..CollectionPlan::default()
            },
            ..ProtocolOptions::default()
        };
        let err = run_case_study(7, &opts).unwrap_err();
        assert!(matches!(err, Error::Stage { .. }), "{err}");
        assert!(matches!(err.root(), Error::Rank { .. } | Error::Input(_)), "{err}");
    }
}
