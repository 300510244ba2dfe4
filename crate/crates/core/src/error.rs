use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    Solver {
        iterations: usize,
        grad_norm: f64,
        last: Vec<f64>,
    },

    #[error("unsupported problem kind: {0}")]
    UnsupportedKind(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("missing label for item {index}")]
    MissingLabel { index: usize },

    #[error("missing prediction for item {index}")]
    MissingPrediction { index: usize },

    #[error("invalid sampling plan at item {index}: {reason}")]
    InvalidPlan { index: usize, reason: String },

    #[error("model state: {0}")]
    State(String),

    #[error("label oracle failed at step {step}: {message}")]
    Oracle { step: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) | Error::UnsupportedKind(_) => 2,
            Error::Degenerate(_) | Error::Singular(_) | Error::Solver { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
