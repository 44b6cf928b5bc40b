//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HyperError>;

#[derive(Debug, Error)]
pub enum HyperError {
    /// A value lies outside the domain of an operation (exterior point,
    /// non-finite input, non-positive curvature).
    #[error("domain error: {0}")]
    Domain(String),

    /// Operands disagree in dimension or curvature.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Structural parameters of a scaling operator or run configuration are invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed tensor file or report.
    #[error("format error: {0}")]
    Format(String),

    /// A sample sits inside the clamp band, where the adjustment is not
    /// differentiable.
    #[error("sample inside the boundary band: {0}")]
    NearBoundary(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Training produced a non-finite loss. `loss_curve` holds every finite
    /// loss recorded before the failure and `params` the last finite state.
    #[error("training diverged at step {step}")]
    Divergence {
        step: usize,
        loss_curve: Vec<f64>,
        params: Vec<f64>,
    },
}

impl HyperError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        HyperError::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        HyperError::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        HyperError::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        HyperError::Format(msg.into())
    }
}
