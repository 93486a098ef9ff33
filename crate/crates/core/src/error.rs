use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("under-reporting u({day}) = {value} is not below 1")]
    UnderReportingSingular { day: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("series for {0} are not aligned on the same dates")]
    AlignmentError(String),

    #[error("region {0} has no eligible neighbors")]
    NoNeighbors(String),

    #[error("unknown region {0}")]
    UnknownRegion(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("lag matrix is singular at p = {0}")]
    SingularLagMatrix(usize),

    #[error("segment [{start}, {end}) has fewer than 3 days")]
    SegmentTooShort { start: usize, end: usize },

    #[error("forecast horizon {requested} exceeds the {available} observed days available")]
    HorizonTooLong { requested: usize, available: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("dates for region {0} are not increasing")]
    NonMonotonicDates(String),

    #[error("duplicate row for region {region} on {date}")]
    DuplicateRow { region: String, date: String },

    #[error("no population for region {0}")]
    MissingPopulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
