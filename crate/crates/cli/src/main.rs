//! `ddlqi`: collect data, check assumptions, synthesize LQI gains and
//! simulate tracking scenarios from a TOML configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddlqi::error::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "ddlqi", version, about = "Data-driven LQI synthesis and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    over: Overrides,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run the open-loop experiment; write the batch and covariance pack.
    Collect,
    /// Preflight table of the stabilizability, detectability and rank checks.
    Check,
    /// Gain from the semidefinite program on a covariance pack.
    SynthSdp,
    /// Gain from the projected gradient flow on a covariance pack.
    SynthPg,
    /// Closed-loop tracking runs of the configured scenario.
    Track,
    /// Full buck-converter case study; writes fig1/fig2/fig3 CSVs.
    DguDemo,
}

/// Command-line settings that take precedence over the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed of the random excitation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Covariance pack to synthesize from instead of collecting.
    #[arg(long, global = true)]
    pub pack: Option<PathBuf>,
    /// Relative duality-gap target of the SDP solver.
    #[arg(long, global = true)]
    pub sdp_tol: Option<f64>,
    /// Barrier updates before the SDP solver gives up.
    #[arg(long, global = true)]
    pub sdp_max_outer: Option<usize>,
    /// Barrier weight multiplier per outer iteration.
    #[arg(long, global = true)]
    pub sdp_mu: Option<f64>,
    /// Fixed flow rate; the rate is re-estimated from curvature when absent.
    #[arg(long, global = true)]
    pub flow_alpha: Option<f64>,
    /// RK4 step in flow time.
    #[arg(long, global = true)]
    pub flow_step: Option<f64>,
    /// Total flow time.
    #[arg(long, global = true)]
    pub flow_horizon: Option<f64>,
    /// Stop once the projected gradient norm falls below this.
    #[arg(long, global = true)]
    pub flow_grad_tol: Option<f64>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    /// 2 configuration or input, 3 rank or assumption, 4 solver
    /// non-convergence, 5 outside the stabilizing set, 1 anything else.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(e) => match e.kind() {
                ErrorKind::Input => 2,
                ErrorKind::Rank | ErrorKind::Assumption => 3,
                ErrorKind::NonConvergence => 4,
                ErrorKind::Domain => 5,
                ErrorKind::Numerical | ErrorKind::Io => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config: {msg}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.over.config {
        Some(path) => config::load(path)?,
        None => config::RunConfig::default(),
    };
    let ctx = commands::Ctx::new(cfg, cli.over);
    match cli.command {
        Command::Collect => commands::collect(&ctx),
        Command::Check => commands::check(&ctx),
        Command::SynthSdp => commands::synth_sdp(&ctx),
        Command::SynthPg => commands::synth_pg(&ctx),
        Command::Track => commands::track(&ctx),
        Command::DguDemo => commands::dgu_demo(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
