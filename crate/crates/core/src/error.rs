//! Error type shared by all pipeline stages.

use thiserror::Error;

/// Unified error for every stage of the pipeline.
///
/// The variants map onto the CLI exit codes: `Config` -> 2,
/// `Data`/`Io` -> 3, `Numerical` -> 4.
#[derive(Debug, Error)]
pub enum FlowError {
    /// Invalid configuration or contract violation on inputs.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed, missing, or inconsistent data artifacts.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Solver divergence, degenerate decompositions, and the like.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl FlowError {
    /// Process exit code for the CLI (0 is success, reserved).
    pub fn exit_code(&self) -> i32 {
        match self {
            FlowError::Config(_) => 2,
            FlowError::Data(_) | FlowError::Io(_) => 3,
            FlowError::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, FlowError>;
