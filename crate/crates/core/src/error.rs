use thiserror::Error;

use crate::sdp::SdpSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Rank,
    Assumption,
    NonConvergence,
    Domain,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{what} did not converge after {iterations} iterations")]
    Numerical { what: &'static str, iterations: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("rank deficient {context}: numerical rank {rank} < {required} (threshold {threshold:.3e})")]
    Rank {
        context: &'static str,
        rank: usize,
        required: usize,
        threshold: f64,
    },

    #[error("overflow in {0}")]
    Overflow(&'static str),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("outside the stabilizing set: {0}")]
    Domain(String),

    #[error("constraint consistency violated: {what} residual {residual:.3e} exceeds {tolerance:.1e}")]
    Consistency {
        what: &'static str,
        residual: f64,
        tolerance: f64,
    },

    #[error("no strictly feasible starting point: {0}")]
    Infeasible(String),

    #[error("barrier method stalled: {0}")]
    Stalled(String),

    #[error("barrier method hit {outer} outer iterations (gap estimate {gap:.3e})")]
    SdpNonConvergence {
        outer: usize,
        gap: f64,
        best: Box<SdpSolution>,
    },

    #[error("solver accuracy: {0}")]
    SolverAccuracy(String),

    #[error("ill-conditioned {what}: condition number {cond:.3e}")]
    Conditioning { what: &'static str, cond: f64 },

    #[error("flow step size underflow at t = {t:.6e} (step {step:.3e})")]
    StepUnderflow { t: f64, step: f64 },

    #[error("i/o: {0}")]
    Io(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension { .. } | Error::NonFinite(_) | Error::Input(_) => ErrorKind::Input,
            Error::Rank { .. } => ErrorKind::Rank,
            Error::Assumption(_) | Error::Infeasible(_) => ErrorKind::Assumption,
            Error::Numerical { .. }
            | Error::SdpNonConvergence { .. }
            | Error::Stalled(_)
            | Error::SolverAccuracy(_)
            | Error::StepUnderflow { .. } => ErrorKind::NonConvergence,
            Error::Domain(_) | Error::Precondition(_) | Error::Consistency { .. } => ErrorKind::Domain,
            Error::Singular(_) | Error::Overflow(_) | Error::Conditioning { .. } => ErrorKind::Numerical,
            Error::Io(_) => ErrorKind::Io,
            Error::Stage { source, .. } => source.kind(),
        }
    }

    /// The innermost error beneath any stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Attach a stage label to an error.
pub trait StageExt<T> {
    fn stage(self, label: impl Into<String>) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, label: impl Into<String>) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage: label.into(),
            source: Box::new(e),
        })
    }
}
