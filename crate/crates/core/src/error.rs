use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("segmentation failed: {0}")]
    SegmentationFailed(String),

    #[error("degenerate warp: triangle {triangle} has (near) zero area")]
    WarpDegenerate { triangle: usize },

    #[error("fit diverged: {0}")]
    FitDiverged(String),

    #[error("undefined score: {0}")]
    UndefinedScore(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("training error in cell (range {range}, cluster {cluster}): {reason}")]
    Training {
        range: usize,
        cluster: usize,
        reason: String,
    },

    #[error("model selection failed: {0}")]
    SelectionFailed(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// True for errors caused by bad input data rather than a failing pipeline stage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MalformedHeader(_)
                | Error::TruncatedPayload { .. }
                | Error::UnsupportedFormat(_)
                | Error::Annotation(_)
                | Error::Config(_)
                | Error::Parameter(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
