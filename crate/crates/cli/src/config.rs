//! TOML run configuration. Unknown keys are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use ddlqi::kernels::{mat, try_from_rows, Mat, Vector};
use ddlqi::lti::{LtiModel, SamplingVariant, WeightSpec};
use ddlqi::sim::{CollectionPlan, DguParams};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Output directory, overridden by `--out`.
    pub output: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub weights: Option<WeightsConfig>,
    pub experiment: Option<ExperimentConfig>,
    pub data: Option<DataConfig>,
    pub sdp: Option<SdpConfig>,
    pub flow: Option<FlowConfig>,
    pub scenario: Option<ScenarioConfig>,
    pub demo: Option<DemoConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Dgu(DguConfig),
    Matrices(MatricesConfig),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DguConfig {
    pub resistance: f64,
    pub inductance: f64,
    pub capacitance: f64,
    pub admittance: f64,
}

impl Default for DguConfig {
    fn default() -> Self {
        let d = DguParams::default();
        Self {
            resistance: d.resistance,
            inductance: d.inductance,
            capacitance: d.capacitance,
            admittance: d.admittance,
        }
    }
}

impl DguConfig {
    pub fn params(&self) -> DguParams {
        DguParams {
            resistance: self.resistance,
            inductance: self.inductance,
            capacitance: self.capacitance,
            admittance: self.admittance,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatricesConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub qx: Vec<Vec<f64>>,
    pub qz: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variant: SamplingVariant,
    pub samples: usize,
    pub spacing: f64,
    /// Window length, integral variant only.
    pub window: f64,
    pub hold: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub x0: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = CollectionPlan::default();
        Self {
            variant: SamplingVariant::Integral,
            samples: p.samples,
            spacing: p.spacing,
            window: p.window,
            hold: p.hold,
            amplitude: p.amplitude,
            offset: p.offset,
            x0: None,
        }
    }
}

impl ExperimentConfig {
    pub fn plan(&self) -> CollectionPlan {
        CollectionPlan {
            samples: self.samples,
            spacing: self.spacing,
            window: self.window,
            hold: self.hold,
            amplitude: self.amplitude,
            offset: self.offset,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Covariance pack written by `collect`.
    pub pack: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdpConfig {
    pub tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub mu_factor: Option<f64>,
    pub check_iterates: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Fixed rate. When unset, `synth-pg` re-estimates it from the local
    /// curvature every `segment_steps` steps.
    pub alpha: Option<f64>,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
    pub grad_tol: Option<f64>,
    pub constraint_renorm_every: Option<usize>,
    pub record_every: Option<usize>,
    pub segment_steps: Option<usize>,
    /// Initial gain of `synth-pg`.
    pub k0: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub start: f64,
    /// Absolute end time.
    pub end: f64,
    #[serde(default = "default_output_dt")]
    pub output_dt: f64,
    /// Rows `[t, r_1, ..., r_p]`.
    pub reference: Vec<Vec<f64>>,
    /// Rows `[t, admittance]`, DGU models only.
    pub admittance_schedule: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub initial: InitialConfig,
    /// Prepend the open-loop experiment and start the loop at its end.
    #[serde(default)]
    pub include_collection: bool,
    pub controllers: Vec<ControllerConfig>,
}

fn default_output_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InitialConfig {
    /// `"zero"` or `"equilibrium"`.
    Named(String),
    /// `[x_1, ..., x_n, z_1, ..., z_p]`.
    State(Vec<f64>),
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Named("zero".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub label: String,
    pub gain: GainSpec,
    pub adaptive: Option<AdaptiveConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    /// `"care"` (model-based optimum) or `"sdp"` (synthesized from data).
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveConfig {
    pub alpha: Option<f64>,
    pub step: f64,
    pub steps_per_sample: usize,
    /// Experimental: gradient from one data pack per plant.
    pub data_driven: bool,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            step: 2.0,
            steps_per_sample: 25,
            data_driven: false,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    pub tracking_reference: Option<Vec<[f64; 2]>>,
    pub tracking_end: Option<f64>,
    pub output_dt: Option<f64>,
    pub load_schedule: Option<Vec<[f64; 2]>>,
    pub load_reference: Option<Vec<[f64; 2]>>,
    pub load_horizon: Option<f64>,
    pub adaptive_step: Option<f64>,
    pub adaptive_steps_per_sample: Option<usize>,
    pub initial_gains: Option<Vec<LabelledGain>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelledGain {
    pub label: String,
    pub k: Vec<Vec<f64>>,
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

pub fn matrix(rows: &[Vec<f64>], what: &'static str) -> Result<Mat, CliError> {
    if rows.is_empty() {
        return Err(CliError::Config(format!("{what} is empty")));
    }
    try_from_rows(rows, what).map_err(|e| CliError::Config(e.to_string()))
}

impl RunConfig {
    /// The configured plant, the nominal DGU when no model is given.
    pub fn model(&self) -> Result<LtiModel, CliError> {
        match &self.model {
            None => Ok(DguParams::default().model()?),
            Some(ModelConfig::Dgu(d)) => Ok(d.params().model()?),
            Some(ModelConfig::Matrices(m)) => Ok(LtiModel::new(
                matrix(&m.a, "model.a")?,
                matrix(&m.b, "model.b")?,
                matrix(&m.c, "model.c")?,
            )?),
        }
    }

    pub fn dgu(&self) -> Option<DguParams> {
        match &self.model {
            None => Some(DguParams::default()),
            Some(ModelConfig::Dgu(d)) => Some(d.params()),
            Some(ModelConfig::Matrices(_)) => None,
        }
    }

    /// Configured weights; the case-study weights for the DGU when unset.
    pub fn weights(&self) -> Result<WeightSpec, CliError> {
        match (&self.weights, self.dgu()) {
            (Some(w), _) => Ok(WeightSpec::new(
                matrix(&w.qx, "weights.qx")?,
                matrix(&w.qz, "weights.qz")?,
                matrix(&w.r, "weights.r")?,
            )?),
            (None, Some(_)) => Ok(WeightSpec::new(Mat::identity(2, 2), mat(&[&[100.0]]), mat(&[&[1.0]]))?),
            (None, None) => Err(CliError::Config(
                "a [weights] section is required for matrix models".into(),
            )),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        self.experiment.clone().unwrap_or_default()
    }

    pub fn x0(&self, n: usize) -> Result<Vector, CliError> {
        match &self.experiment().x0 {
            None => Ok(Vector::zeros(n)),
            Some(v) if v.len() == n => Ok(Vector::from_column_slice(v)),
            Some(v) => Err(CliError::Config(format!(
                "experiment.x0 has {} entries, the model has {n} states",
                v.len()
            ))),
        }
    }
}
