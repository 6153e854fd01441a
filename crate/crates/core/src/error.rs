use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("spectral radius {radius:.6} is not below the stability bound")]
    Divergence { radius: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("target series has zero variance")]
    UndefinedTarget,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical blow-up at step {step}")]
    NumericalBlowup { step: usize },

    #[error("task recursion diverged at step {step}")]
    UnstableTask { step: usize },

    #[error("directions are parallel; the plane is degenerate")]
    DegeneratePlane,

    #[error("encoder is identically zero")]
    ZeroEncoder,

    #[error("objective decreased for {0} consecutive steps; reduce the step size")]
    StepSize(usize),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Numerical failures map to a distinct process exit code in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::Divergence { .. }
                | Error::Convergence { .. }
                | Error::NumericalBlowup { .. }
                | Error::UnstableTask { .. }
                | Error::StepSize(_)
        )
    }
}
