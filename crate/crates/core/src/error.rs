use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Problem configuration is inconsistent or out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data (fields, controls, files) is malformed.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("Newton iteration did not converge at time step {step} (residual {residual:.3e} after {iterations} iterations)")]
    NewtonDiverged {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("linear solve did not converge{}: relative residual {relative_residual:.3e} after {iterations} iterations", step.map(|s| format!(" at time step {s}")).unwrap_or_default())]
    LinearSolve {
        step: Option<usize>,
        iterations: usize,
        relative_residual: f64,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable class name, used for CLI exit reporting.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Precondition(_) => "precondition",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::NewtonDiverged { .. } | Error::LinearSolve { .. } => "convergence",
            Error::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_) => 3,
            Error::Precondition(_) => 4,
            Error::NewtonDiverged { .. } | Error::LinearSolve { .. } => 5,
            Error::Io { .. } => 6,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a time step index to a linear-solver failure.
    pub(crate) fn at_step(self, k: usize) -> Self {
        match self {
            Error::LinearSolve {
                iterations,
                relative_residual,
                ..
            } => Error::LinearSolve {
                step: Some(k),
                iterations,
                relative_residual,
            },
            other => other,
        }
    }
}
