use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ddlqi::error::{Error, StageExt};
use ddlqi::export::{
    fmt_num, write_flow_csv, write_metrics_csv, write_protocol_bundle, write_tracking_csv, BatchFile, GainFile,
    PackFile,
};
use ddlqi::flow::{integrate_flow, integrate_flow_rescaled, suggest_model_step, FlowOptions};
use ddlqi::kernels::{is_hurwitz, solve_care, to_rows, Mat, Vector};
use ddlqi::lti::{
    augment, build_covariances, check_pe_rank, collect_derivative_data, preflight, CovariancePack, DataBatch,
    Excitation, LtiModel, SamplingVariant, WeightSpec,
};
use ddlqi::param::{closed_loop_from_data, gain_to_parameterizer};
use ddlqi::sdp::{assemble_sdp, extract_gain, solve_sdp, SdpOptions};
use ddlqi::sim::{
    run_case_study, segment_metrics, simulate_lqi, track_after_collection, AdaptiveController, Controller,
    GradientSource, InitialCondition, ProtocolOptions, ReferenceProfile, Scenario, SegmentMetric, TrackingRecord,
};
use serde::Serialize;

use crate::config::{matrix, GainSpec, InitialConfig, ModelConfig, RunConfig, ScenarioConfig};
use crate::{CliError, Overrides};

type Res<T> = Result<T, CliError>;

pub struct Ctx {
    pub cfg: RunConfig,
    pub over: Overrides,
    pub out: PathBuf,
}

struct Collected {
    exc: Excitation,
    batch: DataBatch,
}

impl Ctx {
    pub fn new(cfg: RunConfig, over: Overrides) -> Self {
        let out = over
            .out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Self { cfg, over, out }
    }

    fn seed(&self, stage: &str) -> Res<u64> {
        self.over.seed.or(self.cfg.seed).ok_or_else(|| {
            CliError::Config(format!(
                "{stage} is randomized: pass --seed or set `seed` in the config"
            ))
        })
    }

    fn out_dir(&self) -> Res<&Path> {
        fs::create_dir_all(&self.out).map_err(Error::from)?;
        Ok(&self.out)
    }

    fn pack_path(&self) -> Option<PathBuf> {
        self.over
            .pack
            .clone()
            .or_else(|| self.cfg.data.as_ref().map(|d| d.pack.clone()))
    }

    fn collect(&self, model: &LtiModel) -> Res<Collected> {
        let seed = self.seed("data collection")?;
        let exp = self.cfg.experiment();
        let plan = exp.plan();
        let x0 = self.cfg.x0(model.n())?;
        let (exc, batch) = match exp.variant {
            SamplingVariant::Integral => plan.collect(model, seed, &x0).stage("collection")?,
            SamplingVariant::Derivative => {
                let exc = plan.excitation(model.m(), seed).stage("collection")?;
                let batch =
                    collect_derivative_data(model, &exc, plan.spacing, plan.samples, &x0).stage("collection")?;
                (exc, batch)
            }
        };
        for note in &batch.notes {
            eprintln!("note: {note}");
        }
        Ok(Collected { exc, batch })
    }

    /// The pack named on the command line or in `[data]`, otherwise one
    /// collected from the configured model. The flag tells whether the
    /// configured model is the plant behind the data.
    fn pack(&self) -> Res<(CovariancePack, bool)> {
        match self.pack_path() {
            Some(path) => {
                let file: PackFile = read_json(&path)?;
                Ok((file.to_pack()?, self.cfg.model.is_some()))
            }
            None => {
                let model = self.cfg.model()?;
                let c = self.collect(&model)?;
                Ok((build_covariances(&c.batch).stage("covariances")?, true))
            }
        }
    }

    fn sdp_options(&self) -> SdpOptions {
        let mut o = SdpOptions::default();
        if let Some(s) = &self.cfg.sdp {
            o.tol = s.tol.unwrap_or(o.tol);
            o.max_outer = s.max_outer.unwrap_or(o.max_outer);
            o.mu_factor = s.mu_factor.unwrap_or(o.mu_factor);
            o.check_iterates = s.check_iterates.unwrap_or(o.check_iterates);
        }
        o.tol = self.over.sdp_tol.unwrap_or(o.tol);
        o.max_outer = self.over.sdp_max_outer.unwrap_or(o.max_outer);
        o.mu_factor = self.over.sdp_mu.unwrap_or(o.mu_factor);
        o
    }

    /// Flow options over `base`, and the fixed rate if one is configured.
    fn flow_options(&self, base: FlowOptions) -> (FlowOptions, Option<f64>) {
        let mut o = base;
        let mut alpha = None;
        if let Some(f) = &self.cfg.flow {
            alpha = f.alpha;
            o.step = f.step.unwrap_or(o.step);
            o.horizon = f.horizon.unwrap_or(o.horizon);
            o.grad_tol = f.grad_tol.unwrap_or(o.grad_tol);
            o.constraint_renorm_every = f.constraint_renorm_every.unwrap_or(o.constraint_renorm_every);
            o.record_every = f.record_every.unwrap_or(o.record_every);
        }
        alpha = self.over.flow_alpha.or(alpha);
        o.step = self.over.flow_step.unwrap_or(o.step);
        o.horizon = self.over.flow_horizon.unwrap_or(o.horizon);
        o.grad_tol = self.over.flow_grad_tol.unwrap_or(o.grad_tol);
        if let Some(a) = alpha {
            o.alpha = a;
        }
        (o, alpha)
    }

    fn write(&self, name: &str, contents: &str) -> Res<PathBuf> {
        let path = self.out_dir()?.join(name);
        fs::write(&path, contents).map_err(Error::from)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Res<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    fn create(&self, name: &str) -> Res<(fs::File, PathBuf)> {
        let path = self.out_dir()?.join(name);
        let f = fs::File::create(&path).map_err(Error::from)?;
        Ok((f, path))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn row(k: &Mat) -> String {
    let rows: Vec<String> = k
        .row_iter()
        .map(|r| r.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

fn care_gain(model: &LtiModel, weights: &WeightSpec) -> Res<Mat> {
    let aug = augment(model);
    Ok(solve_care(&aug.aa, &aug.ba, &weights.qa(), weights.r())
        .stage("reference gain")?
        .k)
}

pub fn collect(ctx: &Ctx) -> Res<()> {
    let model = ctx.cfg.model()?;
    let c = ctx.collect(&model)?;
    let pack = build_covariances(&c.batch).stage("covariances")?;
    let batch_path = ctx.write_json("batch.json", &BatchFile::from_batch(&c.batch))?;
    let pack_path = ctx.write_json("pack.json", &PackFile::from_pack(&pack))?;
    println!("variant {:?}, {} samples", c.batch.variant, c.batch.samples());
    println!("wrote {}", batch_path.display());
    println!("wrote {}", pack_path.display());
    let pe = check_pe_rank(&pack);
    if pe.ok {
        println!("rank {}/{} OK", pe.rank, pe.required);
        Ok(())
    } else {
        println!(
            "rank {}/{} FAILED (threshold {})",
            pe.rank,
            pe.required,
            fmt_num(pe.threshold)
        );
        Err(Error::Rank {
            context: "[Ubar; Xbar]",
            rank: pe.rank,
            required: pe.required,
            threshold: pe.threshold,
        }
        .into())
    }
}

pub fn check(ctx: &Ctx) -> Res<()> {
    let model = ctx.cfg.model()?;
    let weights = ctx.cfg.weights()?;
    let pack = if ctx.pack_path().is_some() || ctx.over.seed.or(ctx.cfg.seed).is_some() {
        Some(ctx.pack()?.0)
    } else {
        eprintln!("note: no pack and no seed, the rank check is skipped");
        None
    };
    let report = preflight(&model, &weights, pack.as_ref())?;
    print!("{}", report.table());
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Assumption(format!("failed: {}", report.failing().join(", "))).into())
    }
}

pub fn synth_sdp(ctx: &Ctx) -> Res<()> {
    let (pack, model_known) = ctx.pack()?;
    let weights = ctx.cfg.weights()?;
    let problem = assemble_sdp(&pack, &weights).stage("sdp assembly")?;
    let sol = solve_sdp(&problem, &ctx.sdp_options()).stage("sdp")?;
    let k = extract_gain(&sol, &pack).stage("gain extraction")?;
    let gap = sol.epigraph_gap(&problem).stage("sdp")?;

    let mut report = String::new();
    let _ = writeln!(report, "objective {}", fmt_num(sol.objective));
    let _ = writeln!(report, "outer_iterations {}", sol.outer_iterations);
    let _ = writeln!(report, "barrier_iterations {}", sol.barrier_iterations);
    let _ = writeln!(report, "duality_gap_estimate {}", fmt_num(sol.duality_gap_estimate));
    let _ = writeln!(report, "equality_residual {}", fmt_num(sol.equality_residual));
    let _ = writeln!(report, "epigraph_gap {}", fmt_num(gap));
    let mins: Vec<String> = sol.cone_min_eigenvalues.iter().map(|v| fmt_num(*v)).collect();
    let _ = writeln!(report, "cone_min_eigenvalues {}", mins.join(", "));
    let _ = writeln!(report, "K {}", row(&k));
    let mut dump = report.clone();
    for (name, m) in [("W", &sol.w), ("Z", &sol.z), ("S", &sol.s)] {
        let _ = writeln!(dump, "{name}");
        for r in to_rows(m) {
            let _ = writeln!(
                dump,
                "  {}",
                r.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(", ")
            );
        }
    }
    if model_known {
        let model = ctx.cfg.model()?;
        let k_care = care_gain(&model, &weights)?;
        let line = format!(
            "K_CARE {}\n||K - K_CARE||_F {}\n",
            row(&k_care),
            fmt_num((&k - &k_care).norm())
        );
        report += &line;
        dump += &line;
    }
    print!("{report}");
    let gain_path = ctx.write_json(
        "gain_sdp.json",
        &GainFile {
            method: "sdp".into(),
            k: to_rows(&k),
            cost: Some(sol.objective),
        },
    )?;
    let dump_path = ctx.write("sdp_solution.txt", &dump)?;
    println!("wrote {}", gain_path.display());
    println!("wrote {}", dump_path.display());
    Ok(())
}

pub fn synth_pg(ctx: &Ctx) -> Res<()> {
    let k0_rows = ctx
        .cfg
        .flow
        .as_ref()
        .and_then(|f| f.k0.clone())
        .ok_or_else(|| CliError::Config("synth-pg needs an initial gain `k0` in [flow]".into()))?;
    let k0 = matrix(&k0_rows, "flow.k0")?;
    let (pack, model_known) = ctx.pack()?;
    let weights = ctx.cfg.weights()?;
    let g0 = gain_to_parameterizer(&k0, &pack).stage("flow setup")?;
    if !is_hurwitz(&closed_loop_from_data(&g0)).stage("flow setup")? {
        return Err(Error::Domain(
            "initial gain k0 does not stabilize the data closed loop".into(),
        ))
        .stage("flow setup")
        .map_err(CliError::from);
    }
    let base = FlowOptions {
        alpha: 1.0,
        step: 2.0,
        horizon: 3e5,
        grad_tol: 1e-12,
        constraint_renorm_every: 25,
        record_every: 100,
    };
    let (opts, alpha) = ctx.flow_options(base);
    let segment = ctx.cfg.flow.as_ref().and_then(|f| f.segment_steps).unwrap_or(5000);
    let traj = match alpha {
        Some(_) => integrate_flow(&g0, &weights, &opts),
        None => integrate_flow_rescaled(&g0, &weights, &opts, segment),
    }
    .stage("flow")?;
    let k = traj.final_gain().clone();
    let (k_ref, ref_name) = if model_known {
        (care_gain(&ctx.cfg.model()?, &weights)?, "K_CARE")
    } else {
        (k.clone(), "final gain")
    };
    let last = traj.last();
    println!(
        "stop {:?} after {} steps ({} halvings)",
        traj.stop, traj.steps, traj.halvings
    );
    println!("cost {}", fmt_num(last.cost));
    println!("grad_norm {}", fmt_num(last.grad_norm));
    println!("K {}", row(&k));
    if model_known {
        println!("K_CARE {}", row(&k_ref));
        println!("||K - K_CARE||_F {}", fmt_num((&k - &k_ref).norm()));
    }
    let (f, flow_path) = ctx.create("flow.csv")?;
    write_flow_csv(f, &traj, &k_ref)?;
    let gain_path = ctx.write_json(
        "gain_pg.json",
        &GainFile {
            method: "pg".into(),
            k: to_rows(&k),
            cost: Some(last.cost),
        },
    )?;
    println!("wrote {} (residual ratio against {ref_name})", flow_path.display());
    println!("wrote {}", gain_path.display());
    Ok(())
}

fn check_label(label: &str) -> Res<()> {
    let ok = !label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "controller label {label:?} must be non-empty ASCII letters, digits, '_' or '-'"
        )))
    }
}

fn reference(sc: &ScenarioConfig) -> Res<ReferenceProfile> {
    let mut points = Vec::new();
    for r in &sc.reference {
        if r.len() < 2 {
            return Err(CliError::Config(
                "scenario.reference rows are [t, r_1, ..., r_p]".into(),
            ));
        }
        points.push((r[0], Vector::from_column_slice(&r[1..])));
    }
    Ok(ReferenceProfile::new(points)?)
}

fn plants(ctx: &Ctx, sc: &ScenarioConfig) -> Res<Vec<(f64, LtiModel)>> {
    match (&sc.admittance_schedule, ctx.cfg.dgu()) {
        (None, _) => Ok(vec![(0.0, ctx.cfg.model()?)]),
        (Some(_), None) => Err(CliError::Config(
            "scenario.admittance_schedule needs a DGU model".into(),
        )),
        (Some(s), Some(dgu)) => s.iter().map(|[t, y]| Ok((*t, dgu.with_admittance(*y)?))).collect(),
    }
}

pub fn track(ctx: &Ctx) -> Res<()> {
    let sc = ctx
        .cfg
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::Config("track needs a [scenario] section".into()))?;
    if sc.controllers.is_empty() {
        return Err(CliError::Config("scenario has no controllers".into()));
    }
    for (i, c) in sc.controllers.iter().enumerate() {
        check_label(&c.label)?;
        if sc.controllers[..i].iter().any(|o| o.label == c.label) {
            return Err(CliError::Config(format!("duplicate controller label {:?}", c.label)));
        }
    }
    let weights = ctx.cfg.weights()?;
    let plants = plants(ctx, sc)?;
    let nominal = plants[0].1.clone();
    let reference = reference(sc)?;
    let names: &[&str] = if ctx.cfg.dgu().is_some() { &["v", "i"] } else { &[] };

    let mut cached_sdp: Option<Mat> = None;
    let mut resolve = |spec: &GainSpec| -> Res<Mat> {
        match spec {
            GainSpec::Matrix(rows) => matrix(rows, "controller gain"),
            GainSpec::Named(n) if n == "care" => care_gain(&nominal, &weights),
            GainSpec::Named(n) if n == "sdp" => {
                if cached_sdp.is_none() {
                    let (pack, _) = ctx.pack()?;
                    let problem = assemble_sdp(&pack, &weights).stage("sdp assembly")?;
                    let sol = solve_sdp(&problem, &ctx.sdp_options()).stage("sdp")?;
                    cached_sdp = Some(extract_gain(&sol, &pack).stage("gain extraction")?);
                }
                Ok(cached_sdp.clone().expect("set above"))
            }
            GainSpec::Named(n) => Err(CliError::Config(format!(
                "unknown gain {n:?}; use \"care\", \"sdp\" or a matrix"
            ))),
        }
    };

    let collection = if sc.include_collection {
        if plants.len() > 1 {
            return Err(CliError::Config(
                "include_collection needs a single plant (no admittance schedule)".into(),
            ));
        }
        let c = ctx.collect(&nominal)?;
        let end = ctx.cfg.experiment().plan().duration();
        Some((c, end))
    } else {
        None
    };

    let mut runs: Vec<(String, Scenario, TrackingRecord, Vec<SegmentMetric>)> = Vec::new();
    for c in &sc.controllers {
        let k = resolve(&c.gain)?;
        let stage = format!("tracking with {}", c.label);
        let (scenario, record) = match (&collection, &c.adaptive) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "adaptive controllers cannot follow the collection".into(),
                ))
            }
            (Some((col, end)), None) => {
                track_after_collection(&nominal, &col.exc, &k, *end, reference.clone(), sc.end, sc.output_dt)
                    .stage(&stage)?
            }
            (None, adaptive) => {
                let controller = match adaptive {
                    None => Controller::Fixed(k),
                    Some(a) => {
                        let source = if a.data_driven {
                            eprintln!("note: data-driven adaptation is experimental");
                            let mut packs = Vec::new();
                            for (_, plant) in &plants {
                                packs.push(build_covariances(&ctx.collect(plant)?.batch).stage("covariances")?);
                            }
                            GradientSource::Data(packs)
                        } else {
                            GradientSource::Model
                        };
                        let alpha = match a.alpha {
                            Some(v) => v,
                            None => suggest_model_step(&k, &augment(&nominal), &weights, 1.0).stage(&stage)?,
                        };
                        Controller::Adaptive(AdaptiveController {
                            k0: k,
                            weights: weights.clone(),
                            alpha,
                            step: a.step,
                            steps_per_sample: a.steps_per_sample,
                            source,
                        })
                    }
                };
                let initial = match &sc.initial {
                    InitialConfig::Named(n) if n == "equilibrium" => InitialCondition::Equilibrium,
                    InitialConfig::Named(n) if n == "zero" => InitialCondition::State {
                        x: Vector::zeros(nominal.n()),
                        z: Vector::zeros(nominal.p()),
                    },
                    InitialConfig::Named(n) => {
                        return Err(CliError::Config(format!(
                            "unknown initial condition {n:?}; use \"zero\", \"equilibrium\" or a state vector"
                        )))
                    }
                    InitialConfig::State(v) => {
                        if v.len() != nominal.n() + nominal.p() {
                            return Err(CliError::Config(format!(
                                "scenario.initial needs {} entries (states then integrators)",
                                nominal.n() + nominal.p()
                            )));
                        }
                        InitialCondition::State {
                            x: Vector::from_column_slice(&v[..nominal.n()]),
                            z: Vector::from_column_slice(&v[nominal.n()..]),
                        }
                    }
                };
                let scenario = Scenario {
                    plants: plants.clone(),
                    reference: reference.clone(),
                    controller,
                    start: sc.start,
                    horizon: sc.end - sc.start,
                    output_dt: sc.output_dt,
                    initial,
                };
                let record = simulate_lqi(&scenario).stage(&stage)?;
                (scenario, record)
            }
        };
        if record.unstable_segment {
            eprintln!("warning: {} closed loop is unstable on part of the run", c.label);
        }
        if record.blew_up {
            eprintln!("warning: {} trajectory diverged; the record stops early", c.label);
        }
        if record.adaptation_failures > 0 {
            eprintln!(
                "warning: {} adaptation failed {} times",
                c.label, record.adaptation_failures
            );
        }
        let metrics = segment_metrics(&scenario, &record).stage(&stage)?;
        runs.push((c.label.clone(), scenario, record, metrics));
    }

    let mut written = Vec::new();
    for (label, scenario, record, _) in &runs {
        let (f, path) = ctx.create(&format!("track_{label}.csv"))?;
        let adaptive = matches!(scenario.controller, Controller::Adaptive(_));
        write_tracking_csv(f, record, names, adaptive)?;
        written.push(path);
    }
    let (f, path) = ctx.create("track_metrics.csv")?;
    let table: Vec<(&str, &[SegmentMetric])> = runs.iter().map(|(l, _, _, m)| (l.as_str(), m.as_slice())).collect();
    write_metrics_csv(f, &table)?;
    written.push(path);

    println!("controller, segment start, segment end, peak deviation, overshoot, final error");
    for (label, _, _, metrics) in &runs {
        for m in metrics {
            println!(
                "{label}, {}, {}, {}, {}, {}",
                fmt_num(m.start),
                fmt_num(m.end),
                fmt_num(m.peak_deviation),
                fmt_num(m.overshoot),
                fmt_num(m.final_error)
            );
        }
    }
    println!("settling at the end of the run (|y - r| / |r|):");
    for (label, _, record, _) in &runs {
        let last = record.last();
        let err = (&last.y - &last.r).amax();
        let scale = last.r.amax().max(f64::MIN_POSITIVE);
        println!("{label}: t = {}, error {}", fmt_num(last.t), fmt_num(err / scale));
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn pairs(v: &[[f64; 2]]) -> Vec<(f64, f64)> {
    v.iter().map(|[a, b]| (*a, *b)).collect()
}

pub fn dgu_demo(ctx: &Ctx) -> Res<()> {
    let seed = ctx.seed("dgu-demo")?;
    let mut opts = ProtocolOptions::default();
    match &ctx.cfg.model {
        None => {}
        Some(ModelConfig::Dgu(d)) => opts.dgu = d.params(),
        Some(ModelConfig::Matrices(_)) => {
            return Err(CliError::Config("dgu-demo needs a DGU model".into()));
        }
    }
    opts.weights = ctx.cfg.weights()?;
    let exp = ctx.cfg.experiment();
    if exp.variant != SamplingVariant::Integral || exp.x0.is_some() {
        return Err(CliError::Config(
            "dgu-demo collects window integrals from rest; drop experiment.variant and experiment.x0".into(),
        ));
    }
    opts.collection = exp.plan();
    opts.sdp = ctx.sdp_options();
    let (flow, alpha) = ctx.flow_options(opts.flow);
    opts.flow = flow;
    opts.flow_alpha = alpha;
    if let Some(d) = &ctx.cfg.demo {
        if let Some(v) = &d.tracking_reference {
            opts.tracking_reference = pairs(v);
        }
        if let Some(v) = &d.load_schedule {
            opts.load_schedule = pairs(v);
        }
        if let Some(v) = &d.load_reference {
            opts.load_reference = pairs(v);
        }
        opts.tracking_end = d.tracking_end.unwrap_or(opts.tracking_end);
        opts.output_dt = d.output_dt.unwrap_or(opts.output_dt);
        opts.load_horizon = d.load_horizon.unwrap_or(opts.load_horizon);
        opts.adaptive_step = d.adaptive_step.unwrap_or(opts.adaptive_step);
        opts.adaptive_steps_per_sample = d.adaptive_steps_per_sample.unwrap_or(opts.adaptive_steps_per_sample);
        if let Some(gains) = &d.initial_gains {
            opts.initial_gains = Vec::new();
            for g in gains {
                check_label(&g.label)?;
                opts.initial_gains
                    .push((g.label.clone(), matrix(&g.k, "demo.initial_gains")?));
            }
        }
    }
    let bundle = run_case_study(seed, &opts)?;
    let written = write_protocol_bundle(ctx.out_dir()?, &bundle)?;
    print!("{}", bundle.summary());
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
