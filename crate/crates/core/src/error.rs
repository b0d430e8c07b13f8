use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("power iteration did not converge after {iterations} iterations")]
    NumericalFailure { iterations: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("component index {index} out of range (population {population})")]
    IndexError { index: u64, population: usize },
    #[error("operation requires a finite-sum oracle")]
    UnsupportedMode,
    #[error("dimension mismatch: {0}")]
    DimensionError(String),
    #[error("need at least two probe points, got {0}")]
    InsufficientProbes(usize),
    #[error("step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("SPIDER epoch exhausted at k_in_epoch = {k_in_epoch} (q = {q}); refresh required")]
    EpochBoundary { k_in_epoch: usize, q: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error("iteration budget is zero")]
    EmptyRun,
    #[error("potential needs iterates back to index {needed}, window starts at {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("generator error: {0}")]
    GeneratorError(String),
    #[error("{message} (line {line})")]
    ConfigParseError { line: usize, message: String },
    #[error("invalid smoothness profile: {0}")]
    InvalidProfile(String),
    #[error("{failed} of {total} invariant checks failed")]
    CheckFailed { failed: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParseError { .. }
            | Error::ConfigError(_)
            | Error::GeneratorError(_)
            | Error::InvalidTolerance(_)
            | Error::InvalidProfile(_)
            | Error::DimensionError(_)
            | Error::UnsupportedMode
            | Error::EmptyRun
            | Error::Io(_)
            | Error::Csv(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
