//! Closed-loop LQI tracking on piecewise-constant plants and references,
//! plus the DGU case study.

mod dgu;
mod protocol;
mod reference;
mod tracking;

pub use dgu::{dgu_model, nominal_dgu};
pub use protocol::{
    default_initial_gains, run_case_study, track_after_collection, CollectionPlan, DguParams, FlowRun, LoadRun,
    ProtocolBundle, ProtocolOptions,
};
pub use reference::ReferenceProfile;
pub use tracking::{
    equilibrium, segment_metrics, simulate_lqi, AdaptiveController, Controller, GradientSource, InitialCondition,
    Scenario, SegmentMetric, TrackingRecord, TrackingSample,
};
