use thiserror::Error;

/// Errors raised by the multilateration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid scenario: {0}")]
    InvalidSpec(String),

    #[error("underdetermined system: {rows} independent rows for {unknowns} unknowns")]
    Underdetermined { rows: usize, unknowns: usize },

    #[error("pivot station {pivot} out of range for {stations} stations")]
    PivotOutOfRange { pivot: usize, stations: usize },

    #[error("non-finite sample rejected")]
    NonFinite,

    #[error("no frames available for the requested metric")]
    NoData,

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
