use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {message}")]
    Invalid { field: &'static str, message: String },

    #[error("{what} is not strictly increasing near {at}")]
    NonMonotone { what: &'static str, at: f64 },

    #[error("non-finite value in {what} at {at}")]
    NonFinite { what: &'static str, at: f64 },

    #[error("incompatible bid quantile for n = {n}: recovered value decreases near alpha = {at}")]
    IncompatibleBid { n: usize, at: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("tail fit failed: {0}")]
    Tail(String),

    #[error("degenerate k-NN window at order statistic {index}: zero spacing")]
    DegenerateWindow { index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sample too small: need {needed}, got {got}")]
    SampleSize { needed: usize, got: usize },

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("model diagnostics failed: {0}")]
    Diagnostics(String),

    #[error("not identified: {0}")]
    NotIdentified(String),

    #[error("infeasible atom probabilities: {0}")]
    InfeasibleAtoms(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("empty input")]
    Empty,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Error {
    Error::Invalid { field, message: message.into() }
}
