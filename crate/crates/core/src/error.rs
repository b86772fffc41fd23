use thiserror::Error;

/// Failure modes shared by every module.
///
/// Variants map onto CLI exit codes: `Validation` exits with 2, everything
/// else counts as a numeric failure and exits with 3.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("covariance is degenerate at horizon {h:e}")]
    Degenerate { h: f64 },
    #[error("accuracy budget exceeded: {0}")]
    Accuracy(String),
    #[error("path diverged at step {step}")]
    Divergence { step: usize },
    #[error("probe invalid: {0}")]
    ProbeInvalid(String),
    #[error("lambda too small: contraction ratio {ratio:.4} after {iterations} iterations")]
    LambdaTooSmall { ratio: f64, iterations: usize },
    #[error("gradient bound violated: sup |grad_v u| = {measured:.4} > 1/2")]
    GradientBound { measured: f64 },
    #[error("exponential bound exceeded: max exponent {max_exponent:.3e}")]
    BoundExceeded { max_exponent: f64 },
    #[error("process spec violates the domination hypothesis at step {step}")]
    InvalidSpec { step: usize },
    #[error("coupled paths collapsed; negative moment is degenerate")]
    DegenerateRatio,
    #[error("empty measure")]
    EmptyMeasure,
    #[error("too many divergent paths: {diverged} of {total}")]
    TooManyDivergent { diverged: usize, total: usize },
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
