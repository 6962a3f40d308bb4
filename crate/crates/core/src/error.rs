use thiserror::Error;

use crate::series::Signal;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Ingest { line: u64, message: String },

    #[error("series for {poi_id} covers no complete calendar day")]
    NoCompleteDay { poi_id: String },

    #[error("degenerate series: sample standard deviation is zero")]
    ZeroStd,

    #[error("series have no overlapping hours")]
    NoOverlap,

    #[error("series belong to different POIs ({left} vs {right})")]
    PoiMismatch { left: String, right: String },

    #[error(
        "insufficient data: {valid} usable days, need at least {required} \
         ({excluded} zero-peak days excluded)"
    )]
    InsufficientDays {
        valid: usize,
        required: usize,
        excluded: usize,
    },

    #[error("signal mismatch: expected {expected}, got {actual}")]
    SignalMismatch { expected: Signal, actual: Signal },

    #[error("no calendar days shared by both peak sets")]
    NoSharedDays,

    #[error(
        "insufficient coverage: rows span {available_hours} hours before the event, \
         need {required_hours}"
    )]
    InsufficientCoverage {
        available_hours: i64,
        required_hours: i64,
    },

    #[error("feature shape mismatch: expected {expected} features, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("training error: {0}")]
    Training(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Machine-readable code and process exit status used by the CLI.
    pub fn code(&self) -> (&'static str, i32) {
        match self {
            Error::Io(_) => ("io_error", 3),
            Error::Ingest { .. } | Error::Csv(_) | Error::Json(_) => ("parse_error", 4),
            Error::Param(_) | Error::Config(_) | Error::SignalMismatch { .. } => {
                ("config_error", 5)
            }
            Error::NoCompleteDay { .. }
            | Error::ZeroStd
            | Error::NoOverlap
            | Error::PoiMismatch { .. }
            | Error::InsufficientDays { .. }
            | Error::NoSharedDays
            | Error::InsufficientCoverage { .. }
            | Error::Empty(_) => ("data_error", 6),
            Error::Shape { .. } | Error::Training(_) => ("model_error", 7),
        }
    }
}
