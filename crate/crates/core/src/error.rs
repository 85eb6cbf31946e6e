use std::path::PathBuf;

/// Errors produced across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate box")]
    DegenerateBox,

    #[error("empty mask")]
    EmptyMask,

    #[error("no records")]
    NoRecords,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("unpaired files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Orphans(Vec<PathBuf>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite loss at step {step} (parameter norm {param_norm:.6e}): {detail}")]
    NonFiniteLoss {
        step: u64,
        param_norm: f64,
        detail: String,
    },

    #[error("frozen parameters changed: {0}")]
    FreezeViolation(String),

    #[error("unrecognized layer type `{0}`")]
    UnknownLayer(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("service: {0}")]
    Service(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable machine-readable name of the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateBox => "degenerate_box",
            Error::EmptyMask => "empty_mask",
            Error::NoRecords => "no_records",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Record { .. } => "invalid_record",
            Error::Orphans(_) => "unpaired_files",
            Error::Checkpoint(_) => "checkpoint",
            Error::ParamShape { .. } => "parameter_shape",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::FreezeViolation(_) => "freeze_violation",
            Error::UnknownLayer(_) => "unknown_layer",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json(_) => "json",
            Error::Service(_) => "service",
            Error::Config(_) => "config",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn record(index: usize, message: impl Into<String>) -> Self {
        Error::Record {
            index,
            message: message.into(),
        }
    }
}
