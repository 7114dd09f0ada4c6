use ddlqi::flow::{integrate_flow, suggest_step, FlowOptions, FlowStop};
use ddlqi::kernels::{is_hurwitz, mat, solve_care, Mat, Vector};
use ddlqi::lti::{augment, build_covariances, check_pe_rank, preflight, DataBatch, WeightSpec};
use ddlqi::param::gain_to_parameterizer;
use ddlqi::sdp::{assemble_sdp, extract_gain, solve_sdp, SdpOptions};
use ddlqi::sim::{
    equilibrium, nominal_dgu, simulate_lqi, CollectionPlan, Controller, InitialCondition, ReferenceProfile, Scenario,
};

fn weights() -> WeightSpec {
    WeightSpec::new(Mat::identity(2, 2), mat(&[&[100.0]]), mat(&[&[1.0]])).unwrap()
}

#[test]
fn data_to_gain_to_tracking() {
    let model = nominal_dgu();
    let (_, batch) = CollectionPlan::default()
        .collect(&model, 11, &Vector::zeros(2))
        .unwrap();
    let pack = build_covariances(&batch).unwrap();
    assert!(check_pe_rank(&pack).ok);
    assert!(preflight(&model, &weights(), Some(&pack)).unwrap().passed());

    let sol = solve_sdp(&assemble_sdp(&pack, &weights()).unwrap(), &SdpOptions::default()).unwrap();
    let k = extract_gain(&sol, &pack).unwrap();
    let aug = augment(&model);
    let k_care = solve_care(&aug.aa, &aug.ba, &weights().qa(), weights().r()).unwrap().k;
    assert!((&k - &k_care).norm() <= 1e-3, "{k} vs {k_care}");

    let scenario = Scenario {
        plants: vec![(0.0, model.clone())],
        reference: ReferenceProfile::scalar(&[(0.0, 300.0)]).unwrap(),
        controller: Controller::Fixed(k.clone()),
        start: 0.0,
        horizon: 3.0,
        output_dt: 1e-2,
        initial: InitialCondition::State {
            x: Vector::zeros(2),
            z: Vector::zeros(1),
        },
    };
    let record = simulate_lqi(&scenario).unwrap();
    let y = record.last().y[0];
    assert!((y - 300.0).abs() < 0.3, "output {y}");
    let (x_eq, _) = equilibrium(&model, &k, &Vector::from_element(1, 300.0)).unwrap();
    assert!(((model.c() * x_eq)[0] - 300.0).abs() < 1e-9);
}

#[test]
fn flow_reaches_the_sdp_gain_from_a_far_start() {
    let model = nominal_dgu();
    let (_, batch) = CollectionPlan::default().collect(&model, 3, &Vector::zeros(2)).unwrap();
    let pack = build_covariances(&batch).unwrap();
    let sol = solve_sdp(&assemble_sdp(&pack, &weights()).unwrap(), &SdpOptions::default()).unwrap();
    let k_sdp = extract_gain(&sol, &pack).unwrap();
    let alpha = suggest_step(&gain_to_parameterizer(&k_sdp, &pack).unwrap(), &weights(), 1.0).unwrap();

    let k0 = mat(&[&[0.0, 0.0, -1.0]]);
    assert!(is_hurwitz(&augment(&model).closed_loop(&k0).unwrap()).unwrap());
    let opts = FlowOptions {
        alpha,
        step: 2.0,
        horizon: 3e5,
        grad_tol: 1e-14,
        constraint_renorm_every: 25,
        record_every: 500,
    };
    let traj = integrate_flow(&gain_to_parameterizer(&k0, &pack).unwrap(), &weights(), &opts).unwrap();
    assert_eq!(traj.stop, FlowStop::Converged);
    assert!((traj.final_gain() - &k_sdp).norm() <= 1e-3);
}

#[test]
fn split_experiments_give_the_same_closed_loop() {
    let model = nominal_dgu();
    let plan = CollectionPlan {
        samples: 4,
        ..CollectionPlan::default()
    };
    let parts: Vec<DataBatch> = (0..3)
        .map(|i| {
            plan.collect(&model, 20 + i, &Vector::from_element(2, i as f64))
                .unwrap()
                .1
        })
        .collect();
    let pack = build_covariances(&DataBatch::concat(&parts).unwrap()).unwrap();
    let k = mat(&[&[0.4, 1.2, -10.0]]);
    let g = gain_to_parameterizer(&k, &pack).unwrap();
    let aug = augment(&model);
    let diff = (g.closed_loop() - aug.closed_loop(&k).unwrap()).norm();
    assert!(diff <= 1e-9 * (1.0 + aug.aa.norm()), "{diff}");
}
