use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported matrix: {0}")]
    UnsupportedMatrix(String),

    #[error("divergence at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error(
        "consensus target unreachable at iteration {iteration}: achieved xi {achieved_xi:e} \
         > target {target:e} after {gossip_steps} gossip steps"
    )]
    UnreachableTarget { iteration: usize, achieved_xi: f64, target: f64, gossip_steps: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse(_) | Error::InvalidArgument(_))
    }
}
