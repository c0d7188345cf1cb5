use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("sample {index} at ({kx}, {ky}) lies outside [-0.5, 0.5] cycles/pixel")]
    SampleOutOfBounds { index: usize, kx: f64, ky: f64 },

    #[error("infeasible spiral design: {0}")]
    InfeasibleDesign(String),

    #[error("incompatible GSTF frequency grid: {0}")]
    IncompatibleGstf(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("gating failed: {0}")]
    Gating(String),

    #[error("incomplete segmented k-space: phase {phase} is missing orientations {missing:?}")]
    IncompleteSegment { phase: usize, missing: Vec<usize> },

    #[error("insufficient trajectory coverage: {0}")]
    InsufficientCoverage(String),

    #[error("volumetry: {0}")]
    Volumetry(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("layer `{layer}`: {message}")]
    Layer { layer: String, message: String },

    #[error("weights: {0}")]
    Weights(String),

    #[error("{path}: byte {offset}: {message}")]
    Format { path: String, offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn layer(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Layer {
            layer: layer.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::SampleOutOfBounds { .. } => "sample_out_of_bounds",
            Error::InfeasibleDesign(_) => "infeasible_design",
            Error::IncompatibleGstf(_) => "incompatible_gstf",
            Error::NonFinite(_) => "non_finite",
            Error::Gating(_) => "gating",
            Error::IncompleteSegment { .. } => "incomplete_segment",
            Error::InsufficientCoverage(_) => "insufficient_coverage",
            Error::Volumetry(_) => "volumetry",
            Error::Stats(_) => "stats",
            Error::Layer { .. } => "layer",
            Error::Weights(_) => "weights",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
