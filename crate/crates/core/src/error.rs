use alloc::string::String;

/// Errors raised anywhere in the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("Björck orthonormalization produced a non-finite value at iteration {iteration}")]
    OrthoNonFinite { iteration: usize },
    #[error("layer {layer} is not orthonormal within tolerance (residual {residual:e} > {tolerance:e})")]
    OrthoResidual {
        layer: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("network is not Lipschitz-constrained; no certified constant exists")]
    NotLipschitz,
    #[error("gradient tape is stale: network parameters changed after the forward pass")]
    StaleTape,
    #[error("value {value} outside [0, 1] at index {index}")]
    OutOfRange { index: usize, value: f64 },
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
