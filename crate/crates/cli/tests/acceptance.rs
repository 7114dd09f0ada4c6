//! Acceptance criteria 1 to 10, one PASS/FAIL line each, plus the recorded
//! load-step metrics. Runs sequentially so the timing criteria measure the
//! work alone.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ddlqi::error::Error;
use ddlqi::flow::{cost_fg, gradient_fg, integrate_flow, projection_pi, suggest_step, FlowOptions, FlowTrajectory};
use ddlqi::kernels::{
    lyapunov_residual, mat, shifted_stabilizing_gain, solve_care, solve_lyapunov, spectral_abscissa, Mat, Vector,
};
use ddlqi::lti::{
    augment, build_covariances, check_aug_stabilizable, collect_derivative_data, collect_integral_data, preflight,
    CovariancePack, DataBatch, Excitation, LtiModel, WeightSpec, DATA_RANK, DETECTABILITY, STABILIZABILITY,
};
use ddlqi::param::{gain_to_parameterizer, Parameterizer};
use ddlqi::sdp::{assemble_sdp, extract_gain, solve_sdp, SdpOptions, SdpSolution};
use ddlqi::sim::{equilibrium, nominal_dgu, CollectionPlan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- demo runs

struct Demo {
    first: PathBuf,
    second: PathBuf,
    elapsed: Duration,
}

fn run_demo(out: &Path) -> Result<Duration, String> {
    let _ = fs::remove_dir_all(out);
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_ddlqi"))
        .args(["dgu-demo", "--seed", "7", "--out"])
        .arg(out)
        .output()
        .map_err(|e| format!("cannot start ddlqi: {e}"))?;
    let elapsed = start.elapsed();
    if !status.status.success() {
        return Err(format!("dgu-demo failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    Ok(elapsed)
}

fn demo() -> Result<Demo, String> {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let first = root.join("run1");
    let second = root.join("run2");
    let elapsed = run_demo(&first)?;
    run_demo(&second)?;
    Ok(Demo { first, second, elapsed })
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| format!("{} is empty", path.display()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> Result<usize, String> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| format!("missing column {name}"))
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

/// Row vector printed as `NAME = [a, b, c]` in the summary.
fn summary_gain(summary: &str, name: &str) -> Result<Mat, String> {
    let line = summary
        .lines()
        .find(|l| l.starts_with(name))
        .ok_or_else(|| format!("summary has no {name}"))?;
    let inner = line
        .split_once('[')
        .and_then(|(_, r)| r.split_once(']'))
        .ok_or_else(|| format!("malformed {name} line"))?
        .0;
    let v: Vec<f64> = inner.split(',').map(|s| num(s.trim())).collect();
    Ok(Mat::from_row_slice(1, v.len(), &v))
}

fn dgu_weights() -> WeightSpec {
    WeightSpec::new(Mat::identity(2, 2), mat(&[&[100.0]]), mat(&[&[1.0]])).unwrap()
}

fn care_gain(model: &LtiModel, w: &WeightSpec) -> Mat {
    let aug = augment(model);
    solve_care(&aug.aa, &aug.ba, &w.qa(), w.r()).unwrap().k
}

// ------------------------------------------------------------ random plants

fn random_model(rng: &mut ChaCha8Rng) -> LtiModel {
    loop {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=2);
        let p = rng.random_range(1..=m);
        let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b = Mat::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let c = Mat::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        let model = LtiModel::new(a, b, c).unwrap();
        if check_aug_stabilizable(&model).is_ok_and(|r| r.ok) {
            return model;
        }
    }
}

fn random_weights(rng: &mut ChaCha8Rng, model: &LtiModel) -> WeightSpec {
    let spd = |rng: &mut ChaCha8Rng, k: usize| {
        let m = Mat::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + Mat::identity(k, k) * 0.5
    };
    WeightSpec::new(spd(rng, model.n()), spd(rng, model.p()), spd(rng, model.m())).unwrap()
}

/// Window-integral or point-sample data with `2 (n + m) + 2` columns.
/// Short experiments from fresh random states keep the data well conditioned
/// even when the plant is open-loop unstable.
fn random_pack(rng: &mut ChaCha8Rng, model: &LtiModel, integral: bool) -> CovariancePack {
    let (n, m) = (model.n(), model.m());
    let (per, dt) = (3, 0.2);
    let parts: Vec<_> = (0..2 * (n + m))
        .map(|_| {
            let x0 = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let seed = rng.random();
            if integral {
                let exc = Excitation::random(m, 5 * per + 5, dt / 5.0, 1.0, 0.0, seed).unwrap();
                collect_integral_data(model, &exc, dt, dt, per, &x0).unwrap()
            } else {
                let exc = Excitation::random(m, per, dt, 1.0, 0.0, seed).unwrap();
                collect_derivative_data(model, &exc, dt, per, &x0).unwrap()
            }
        })
        .collect();
    build_covariances(&DataBatch::concat(&parts).unwrap()).unwrap()
}

fn stabilizing_gain(rng: &mut ChaCha8Rng, model: &LtiModel) -> Mat {
    let aug = augment(model);
    if rng.random_bool(0.5) {
        shifted_stabilizing_gain(&aug.aa, &aug.ba).unwrap()
    } else {
        let w = random_weights(rng, model);
        solve_care(&aug.aa, &aug.ba, &w.qa(), w.r()).unwrap().k
    }
}

// --------------------------------------------------------------- criteria

fn c1(demo: &Demo) -> Check {
    let summary = fs::read_to_string(demo.first.join("summary.txt")).map_err(|e| e.to_string())?;
    let k_sdp = summary_gain(&summary, "K_SDP")?;
    let k_care = care_gain(&nominal_dgu(), &dgu_weights());
    let paper = mat(&[&[0.409, 1.164, -9.997]]);
    let gap = (&k_sdp - &k_care).norm();
    let entry = (&k_care - &paper).amax();
    let secs = demo.elapsed.as_secs_f64();
    ensure(gap <= 1e-3, || format!("||K_SDP - K_CARE||_F = {gap:.3e} > 1e-3"))?;
    ensure(entry <= 5e-3, || {
        format!("K_CARE differs from the reported gain by {entry:.3e}")
    })?;
    ensure(secs <= 10.0, || format!("dgu-demo took {secs:.2} s"))?;
    Ok(format!(
        "gap {gap:.3e}, K_CARE = [{:.4}, {:.4}, {:.4}], max entry deviation {entry:.2e}, {secs:.2} s",
        k_care[0], k_care[1], k_care[2]
    ))
}

fn c2() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let (mut worst, mut count) = (0.0f64, 0);
    for integral in [false, true] {
        for _ in 0..100 {
            let model = random_model(&mut rng);
            let pack = random_pack(&mut rng, &model, integral);
            let k = stabilizing_gain(&mut rng, &model);
            let aug = augment(&model);
            let g = gain_to_parameterizer(&k, &pack).map_err(|e| format!("parameterizer: {e}"))?;
            let err = (g.closed_loop() - aug.closed_loop(&k).unwrap()).norm() / (1.0 + aug.aa.norm());
            worst = worst.max(err);
            count += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-9, || format!("worst scaled mismatch {worst:.3e}"))?;
    ensure(secs <= 30.0, || format!("took {secs:.2} s"))?;
    Ok(format!(
        "{count} pairs (both variants), worst scaled mismatch {worst:.2e}, {secs:.2} s"
    ))
}

/// Five-point directional derivative of the cost along `d`.
/// Five-point derivative along `d`; the step shrinks until every stencil
/// point stays in the stabilizing set.
fn directional(g: &Mat, d: &Mat, mut h: f64, pack: &CovariancePack, w: &WeightSpec) -> f64 {
    let f = |s: f64| Parameterizer::new(g + d * s, pack).and_then(|p| cost_fg(&p, w));
    for _ in 0..8 {
        if let (Ok(a), Ok(b), Ok(c), Ok(e)) = (f(-2.0 * h), f(-h), f(h), f(2.0 * h)) {
            return (a - 8.0 * b + 8.0 * c - e) / (12.0 * h);
        }
        h /= 10.0;
    }
    panic!("no stabilizing finite-difference stencil along the direction");
}

fn c3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let (mut worst, mut count, mut skipped) = (0.0f64, 0, 0);
    for _ in 0..6 {
        let model = random_model(&mut rng);
        let weights = random_weights(&mut rng, &model);
        let pack = random_pack(&mut rng, &model, false);
        let pi = projection_pi(&pack).unwrap();
        let mut taken = 0;
        while taken < 4 {
            let aug = augment(&model);
            let w = random_weights(&mut rng, &model);
            let k = solve_care(&aug.aa, &aug.ba, &w.qa(), w.r()).unwrap().k;
            let k = &k + Mat::from_fn(k.nrows(), k.ncols(), |_, _| rng.random_range(-0.1..0.1));
            // very high gains make the cost itself too ill conditioned for a
            // finite-difference oracle
            if k.norm() > 1e3 {
                skipped += 1;
                continue;
            }
            if spectral_abscissa(&aug.closed_loop(&k).unwrap()).unwrap() >= -1e-2 {
                continue;
            }
            let g = gain_to_parameterizer(&k, &pack).unwrap();
            let tangent = &pi * gradient_fg(&g, &weights).unwrap();
            let scale = tangent.norm();
            let mut dirs = vec![&tangent / scale];
            for _ in 0..2 {
                let r = &pi * Mat::from_fn(g.g.nrows(), g.g.ncols(), |_, _| rng.random_range(-1.0..1.0));
                dirs.push(&r / r.norm());
            }
            let acl = pack.closed_loop_data() * &g.g;
            for d in dirs {
                // step sized so neither the gain nor the closed loop moves by more
                // than a fixed relative amount
                let dk = (&pack.ubar * &d).norm() / (1.0 + k.norm());
                let da = (pack.closed_loop_data() * &d).norm() / (1.0 + acl.norm());
                let h = 1e-4 / dk.max(da);
                let fd = directional(&g.g, &d, h, &pack, &weights);
                let analytic = tangent.dot(&d);
                worst = worst.max((fd - analytic).abs() / scale);
            }
            taken += 1;
            count += 1;
        }
    }
    ensure(worst <= 1e-5, || {
        format!("worst relative error {worst:.3e} over {count} points")
    })?;
    Ok(format!(
        "{count} points on 6 plants, worst relative error {worst:.2e} ({skipped} gains above 1e3 skipped)"
    ))
}

fn c4(demo: &Demo) -> Check {
    let summary = fs::read_to_string(demo.first.join("summary.txt")).map_err(|e| e.to_string())?;
    let aug = augment(&nominal_dgu());
    let mut parts = Vec::new();
    for label in ["k1", "k2", "k3"] {
        let line = summary
            .lines()
            .find(|l| l.starts_with(&format!("flow {label}:")))
            .ok_or_else(|| format!("no flow {label} in the summary"))?;
        ensure(line.contains("Converged"), || {
            format!("flow {label} did not converge: {line}")
        })?;
        let (header, rows) = read_csv(&demo.first.join(format!("fig2_flow_{label}.csv")))?;
        let ratio_col = column(&header, "residual_ratio")?;
        let k_cols: Vec<usize> = (1..=3)
            .map(|i| column(&header, &format!("k_{i}")))
            .collect::<Result<_, _>>()?;
        let ratios: Vec<f64> = rows.iter().map(|r| num(&r[ratio_col])).collect();
        let last = *ratios.last().ok_or("empty flow trajectory")?;
        ensure(last <= 1e-6, || format!("{label}: final residual ratio {last:.3e}"))?;
        ensure(ratios.windows(2).all(|w| w[1] < w[0]), || {
            format!("{label}: residual ratio is not strictly decreasing")
        })?;
        let mut max_abscissa = f64::NEG_INFINITY;
        for r in &rows {
            let k = Mat::from_row_slice(1, 3, &k_cols.iter().map(|&c| num(&r[c])).collect::<Vec<_>>());
            max_abscissa = max_abscissa.max(spectral_abscissa(&aug.closed_loop(&k).unwrap()).unwrap());
        }
        ensure(max_abscissa < 0.0, || {
            format!("{label}: a sample has abscissa {max_abscissa:.3e}")
        })?;
        parts.push(format!("{label} {last:.1e} ({} samples)", rows.len()));
    }
    let secs = demo.elapsed.as_secs_f64();
    ensure(secs <= 60.0, || format!("demo took {secs:.2} s"))?;
    Ok(format!(
        "final ratios {}; monotone; all samples Hurwitz",
        parts.join(", ")
    ))
}

/// SDP and rescaled-flow gains on one pack.
fn projected_gradient_norm(g: &Parameterizer<'_>, weights: &WeightSpec) -> f64 {
    (projection_pi(g.pack).unwrap() * gradient_fg(g, weights).unwrap()).norm()
}

/// Flow settings of the case study: rate `1 / L` from the curvature at the
/// SDP solution and unit steps of 2.
fn sdp_vs_flow(pack: &CovariancePack, weights: &WeightSpec, k0: &Mat) -> Result<(Mat, FlowTrajectory), String> {
    let problem = assemble_sdp(pack, weights).map_err(|e| e.to_string())?;
    let sol = solve_sdp(&problem, &SdpOptions::default()).map_err(|e| format!("sdp: {e}"))?;
    let k_sdp = extract_gain(&sol, pack).map_err(|e| e.to_string())?;
    let g_sdp = gain_to_parameterizer(&k_sdp, pack).map_err(|e| e.to_string())?;
    let alpha = suggest_step(&g_sdp, weights, 1.0).map_err(|e| e.to_string())?;
    let g0 = gain_to_parameterizer(k0, pack).map_err(|e| e.to_string())?;
    let opts = FlowOptions {
        alpha,
        step: 2.0,
        horizon: 3e5,
        grad_tol: 1e-9 * projected_gradient_norm(&g0, weights),
        constraint_renorm_every: 25,
        record_every: 1000,
    };
    let traj = integrate_flow(&g0, weights, &opts).map_err(|e| format!("flow: {e}"))?;
    Ok((k_sdp, traj))
}

fn c5(demo: &Demo) -> Check {
    let summary = fs::read_to_string(demo.first.join("summary.txt")).map_err(|e| e.to_string())?;
    let k_sdp = summary_gain(&summary, "K_SDP")?;
    let mut dgu_gap = 0.0f64;
    for label in ["k1", "k2", "k3"] {
        let line = summary
            .lines()
            .find(|l| l.starts_with(&format!("flow {label}:")))
            .ok_or_else(|| format!("no flow {label} in the summary"))?;
        let gain = summary_gain(line, "flow")?;
        dgu_gap = dgu_gap.max((&k_sdp - &gain).norm());
    }
    ensure(dgu_gap <= 1e-3, || format!("DGU gap {dgu_gap:.3e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5005);
    let (mut worst, mut steps) = (0.0f64, 0);
    for i in 0..10 {
        let model = random_model(&mut rng);
        let weights = random_weights(&mut rng, &model);
        let pack = random_pack(&mut rng, &model, i % 2 == 1);
        // optimal gain of another random weighting as the starting point
        let aug = augment(&model);
        let other = random_weights(&mut rng, &model);
        let k0 = solve_care(&aug.aa, &aug.ba, &other.qa(), other.r()).unwrap().k;
        let (k_sdp, traj) = sdp_vs_flow(&pack, &weights, &k0).map_err(|e| format!("plant {i}: {e}"))?;
        worst = worst.max((&k_sdp - traj.final_gain()).norm());
        steps = steps.max(traj.steps);
    }
    ensure(worst <= 1e-3, || format!("worst random-plant gap {worst:.3e}"))?;
    Ok(format!(
        "DGU gap {dgu_gap:.2e} over the three case-study flows, worst gap over 10 random plants {worst:.2e} (at most {steps} flow steps)"
    ))
}

/// Spectral abscissa of `[Xpbar; -Ybar] Z W^{-1}`.
fn data_abscissa(sol: &SdpSolution, pack: &CovariancePack) -> f64 {
    let chol = sol.w.clone().cholesky().expect("W is positive definite");
    let g = chol.solve(&sol.z.transpose()).transpose();
    spectral_abscissa(&(pack.closed_loop_data() * g)).unwrap()
}

fn c6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6006);
    let (mut solves, mut early, mut violations) = (0, 0, 0);
    for i in 0..30 {
        let model = random_model(&mut rng);
        let weights = random_weights(&mut rng, &model);
        let pack = random_pack(&mut rng, &model, i % 2 == 0);
        let problem = assemble_sdp(&pack, &weights).unwrap();
        for max_outer in [1, 2, 3, 5, 60] {
            let opts = SdpOptions {
                max_outer,
                check_iterates: true,
                ..SdpOptions::default()
            };
            let sol = match solve_sdp(&problem, &opts) {
                Ok(sol) => sol,
                Err(Error::SdpNonConvergence { best, .. }) => {
                    early += 1;
                    *best
                }
                Err(e) => return Err(format!("plant {i}, cap {max_outer}: {e}")),
            };
            solves += 1;
            let feasible = sol.cone_min_eigenvalues.iter().all(|&v| v > 0.0);
            ensure(feasible, || {
                format!("plant {i}, cap {max_outer}: iterate left the cone")
            })?;
            violations += sol.stability_violations;
            if data_abscissa(&sol, &pack) >= 0.0 {
                violations += 1;
            }
        }
    }
    ensure(violations == 0, || format!("{violations} stability violations"))?;
    Ok(format!(
        "{solves} solutions ({early} stopped early), every outer iterate checked, 0 violations"
    ))
}

fn c7(demo: &Demo) -> Check {
    let (header, rows) = read_csv(&demo.first.join("fig1_tracking.csv"))?;
    let (t_col, v_col, r_col) = (column(&header, "t")?, column(&header, "v")?, column(&header, "r")?);
    let at = |t: f64| -> Result<(f64, f64), String> {
        rows.iter()
            .find(|r| (num(&r[t_col]) - t).abs() < 1e-9)
            .map(|r| (num(&r[v_col]), num(&r[r_col])))
            .ok_or_else(|| format!("no sample at t = {t}"))
    };
    let mut parts = Vec::new();
    for t in [1.999, 2.999] {
        let (v, r) = at(t)?;
        let rel = (v - r).abs() / r.abs();
        ensure(rel < 1e-3, || format!("error {rel:.3e} at t = {t}"))?;
        parts.push(format!("{:.2e} at {t} s", rel));
    }
    // after the last step: the loop settles at 200 and the error decays
    let summary = fs::read_to_string(demo.first.join("summary.txt")).map_err(|e| e.to_string())?;
    let k_sdp = summary_gain(&summary, "K_SDP")?;
    let plant = nominal_dgu();
    let (x_eq, _) = equilibrium(&plant, &k_sdp, &Vector::from_element(1, 200.0)).map_err(|e| e.to_string())?;
    let y_eq = (plant.c() * x_eq)[0];
    ensure((y_eq - 200.0).abs() < 1e-9, || format!("equilibrium output {y_eq}"))?;
    let errs: Vec<f64> = [3.25, 3.5, 3.75, 4.0]
        .iter()
        .map(|&t| at(t).map(|(v, _)| (v - 200.0).abs()))
        .collect::<Result<_, _>>()?;
    ensure(errs.windows(2).all(|w| w[1] < w[0]), || {
        format!("error does not decay: {errs:?}")
    })?;
    let (v_end, _) = at(4.0)?;
    let rel_end = (v_end - 200.0).abs() / 200.0;
    ensure(rel_end < 5e-3, || format!("error {rel_end:.3e} at 4 s"))?;
    Ok(format!(
        "error {}; after the 3 s step the equilibrium is {y_eq:.9} V and the error decays to {rel_end:.2e} at 4 s",
        parts.join(", ")
    ))
}

fn c8() -> Check {
    let model = nominal_dgu();
    let (_, batch) = CollectionPlan::default().collect(&model, 7, &Vector::zeros(2)).unwrap();
    let pack = build_covariances(&batch).unwrap();
    let dgu = preflight(&model, &dgu_weights(), Some(&pack)).map_err(|e| e.to_string())?;
    ensure(dgu.passed(), || format!("DGU fails {:?}", dgu.failing()))?;
    let unit = |k: usize| WeightSpec::new(Mat::identity(2, 2), Mat::identity(k, k), mat(&[&[1.0]])).unwrap();
    let cases = [
        (
            "B = 0",
            LtiModel::new(mat(&[&[1.0, 0.0], &[0.0, -1.0]]), Mat::zeros(2, 1), mat(&[&[1.0, 1.0]])).unwrap(),
            unit(1),
            STABILIZABILITY,
        ),
        (
            "p > m",
            LtiModel::new(
                mat(&[&[-1.0, 0.0], &[0.0, -2.0]]),
                mat(&[&[1.0], &[1.0]]),
                Mat::identity(2, 2),
            )
            .unwrap(),
            unit(2),
            STABILIZABILITY,
        ),
        (
            "hidden unstable mode",
            LtiModel::new(
                mat(&[&[1.0, 0.0], &[0.0, -1.0]]),
                mat(&[&[1.0], &[1.0]]),
                mat(&[&[0.0, 1.0]]),
            )
            .unwrap(),
            WeightSpec::new(mat(&[&[0.0, 0.0], &[0.0, 1.0]]), mat(&[&[1.0]]), mat(&[&[1.0]])).unwrap(),
            DETECTABILITY,
        ),
    ];
    for (name, model, weights, expected) in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(8008);
        let pack = random_pack(&mut rng, &model, false);
        let report = preflight(&model, &weights, Some(&pack)).map_err(|e| e.to_string())?;
        let failing = report.failing();
        ensure(failing == vec![expected], || format!("{name}: failing {failing:?}"))?;
    }
    let _ = DATA_RANK;
    Ok(
        "DGU passes all three; B = 0 and p > m fail only stabilizability; the hidden mode fails only detectability"
            .into(),
    )
}

fn c9() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9009);
    let mut worst_lyap = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let m = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = spectral_abscissa(&m).unwrap() + rng.random_range(0.05..1.0);
        let a = m - Mat::identity(n, n) * shift;
        let l = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = &l * l.transpose() + Mat::identity(n, n);
        let p = solve_lyapunov(&a, &q).map_err(|e| e.to_string())?;
        let scale = 2.0 * a.norm() * p.norm() + q.norm();
        worst_lyap = worst_lyap.max(lyapunov_residual(&a, &p, &q).norm() / scale);
    }
    ensure(worst_lyap <= 1e-10, || {
        format!("Lyapunov scaled residual {worst_lyap:.3e}")
    })?;
    let mut worst_care = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=3);
        let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b = Mat::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let l = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = &l * l.transpose() + Mat::identity(n, n) * 0.1;
        let lr = Mat::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let r = &lr * lr.transpose() + Mat::identity(m, m);
        let sol = solve_care(&a, &b, &q, &r).map_err(|e| e.to_string())?;
        let r_inv = r.clone().try_inverse().unwrap();
        let quad = &sol.p * &b * r_inv * b.transpose() * &sol.p;
        let res = a.transpose() * &sol.p + &sol.p * &a - &quad + &q;
        let scale = 2.0 * a.norm() * sol.p.norm() + quad.norm() + q.norm();
        worst_care = worst_care.max(res.norm() / scale);
        let abscissa = spectral_abscissa(&(&a - &b * &sol.k)).unwrap();
        ensure(abscissa < 0.0, || format!("CARE closed loop abscissa {abscissa:.3e}"))?;
    }
    ensure(worst_care <= 1e-8, || format!("CARE scaled residual {worst_care:.3e}"))?;
    Ok(format!(
        "1000 Lyapunov (n <= 8) worst {worst_lyap:.2e}; 200 CARE worst {worst_care:.2e}, all closed loops Hurwitz"
    ))
}

fn c10(demo: &Demo) -> Check {
    let mut names: Vec<String> = fs::read_dir(&demo.first)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    ensure(!names.is_empty(), || "no CSV output".into())?;
    for name in &names {
        let a = fs::read(demo.first.join(name)).map_err(|e| e.to_string())?;
        let b = fs::read(demo.second.join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} CSV files byte-identical across two runs", names.len()))
}

/// Load-step metrics of the demo. Thresholds come from our own simulation:
/// overshoot is zero up to rounding for K*, K2 and the adaptive run, and
/// above 1 V for K1 and K3 on both load steps.
fn fig3(demo: &Demo) -> Check {
    let (header, rows) = read_csv(&demo.first.join("fig3_metrics.csv"))?;
    let (c, s, pd, os) = (
        column(&header, "controller")?,
        column(&header, "start")?,
        column(&header, "peak_deviation")?,
        column(&header, "overshoot")?,
    );
    let mut lines = Vec::new();
    for label in ["k_star", "k1", "k2", "k3", "adaptive"] {
        let mut cells = Vec::new();
        for t in [0.5, 2.5] {
            let row = rows
                .iter()
                .find(|r| r[c] == label && (num(&r[s]) - t).abs() < 1e-9)
                .ok_or_else(|| format!("no {label} segment at {t}"))?;
            let (peak, over) = (num(&row[pd]), num(&row[os]));
            let expect_overshoot = matches!(label, "k1" | "k3");
            if expect_overshoot {
                ensure(over > 1.0, || format!("{label} overshoot {over:.3e} at {t} s"))?;
            } else {
                ensure(over < 1e-6, || format!("{label} overshoot {over:.3e} at {t} s"))?;
            }
            cells.push(format!("{peak:.2}/{over:.2}"));
        }
        lines.push(format!("{label} {}", cells.join(" ")));
    }
    Ok(format!("peak/overshoot at 0.5 s and 2.5 s: {}", lines.join("; ")))
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    })
}

type Runner<'a> = Box<dyn Fn() -> Check + 'a>;

/// `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.
fn main() -> ExitCode {
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let needs_demo = ["1", "4", "5", "7", "10", "fig3"].iter().any(|id| wanted(id));
    let demo = if needs_demo { demo() } else { Err("not run".into()) };
    let with_demo = |f: fn(&Demo) -> Check| -> Check {
        match &demo {
            Ok(d) => guarded(|| f(d)),
            Err(e) => Err(e.clone()),
        }
    };
    let checks: Vec<(&str, &str, Runner)> = vec![
        ("1", "DGU gain reproduction", Box::new(|| with_demo(c1))),
        ("2", "closed-loop parameterization", Box::new(|| guarded(c2))),
        ("3", "gradient correctness", Box::new(|| guarded(c3))),
        ("4", "flow convergence", Box::new(|| with_demo(c4))),
        ("5", "cross-method agreement", Box::new(|| with_demo(c5))),
        ("6", "feasibility implies stability", Box::new(|| guarded(c6))),
        ("7", "tracking", Box::new(|| with_demo(c7))),
        ("8", "assumption checkers", Box::new(|| guarded(c8))),
        ("9", "kernel oracles", Box::new(|| guarded(c9))),
        ("10", "determinism", Box::new(|| with_demo(c10))),
        ("fig3", "load-step overshoot (recorded)", Box::new(|| with_demo(fig3))),
    ];
    let mut failed = 0;
    for (id, name, check) in checks.iter().filter(|(id, _, _)| wanted(id)) {
        let started = Instant::now();
        let result = check();
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>4} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>4} FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    }
}
