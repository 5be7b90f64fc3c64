use thiserror::Error;

/// Errors produced by the numerical core and the data layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("ill-conditioned design (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("no crossing: target {target} is not below the initial value {initial}")]
    NoCrossing { target: f64, initial: f64 },

    #[error("curve does not reach {target} within horizon {horizon}")]
    HorizonExceeded { target: f64, horizon: f64 },

    #[error("optimizer did not converge (best sse {sse:.6e} after {iterations} iterations)")]
    NonConvergence { sse: f64, iterations: usize },

    #[error("bootstrap unstable: {failed} of {total} replicate refits failed")]
    BootstrapInstability { failed: usize, total: usize },

    #[error("battery {battery_id} not observed to end-of-life threshold {threshold}")]
    NotObservedToEol { battery_id: String, threshold: f64 },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate cycle {cycle} for battery {battery_id}")]
    DuplicateCycle { battery_id: String, cycle: f64 },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
