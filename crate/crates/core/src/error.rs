use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading or writing NPY tensor files.
#[derive(Debug, Error)]
pub enum NpyError {
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype '{0}', only '<f4' is accepted")]
    UnsupportedDtype(String),
    #[error("unsupported layout: fortran_order must be False")]
    FortranOrder,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing bytes after payload: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("tensor contains non-finite values")]
    NonFinite,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Npy(#[from] NpyError),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("undefined HD95 for label {label}: {reason}")]
    UndefinedHd95 { label: u32, reason: String },

    #[error("feature set: {0}")]
    FeatureSet(String),

    #[error("invalid objective: {0}")]
    InvalidObjective(String),

    #[error(
        "non-finite objective at iteration {iteration}: J={total}, D_I={intensity:?}, D_F={feature:?}, R={regularizer}"
    )]
    NumericalAbort {
        iteration: usize,
        total: f64,
        intensity: Option<f64>,
        feature: Option<f64>,
        regularizer: f64,
    },

    #[error("endpoint check failed: {0}")]
    EndpointMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by the inputs' content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Npy(NpyError::Io { .. }))
    }
}
