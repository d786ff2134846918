use thiserror::Error;

/// Errors produced by the optimizer, the coordinator and the experiment tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every unnormalized sample weight was zero. Carries the cost batch so the
    /// caller can retry with a different shape function.
    #[error("all {} sample weights are zero", costs.len())]
    DegenerateWeights { costs: Vec<f64> },

    #[error("rollout of sample {sample} produced a non-finite state at step {step}")]
    RolloutDiverged { sample: usize, step: usize },

    #[error("inconsistent moment set: fourth central moment {radicand} is negative")]
    MomentInconsistency { radicand: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {path}: {reason}")]
    Format { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
