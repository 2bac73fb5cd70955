use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence decreases at index {index}")]
    DecreasingInput { index: usize },

    #[error("group totals differ: {left} vs {right}")]
    TotalMismatch { left: u64, right: u64 },

    #[error("infeasible bounds: last value {last} is below lower bound {lower}")]
    InfeasibleBounds { lower: f64, last: f64 },

    #[error("cannot round to total {total}: {reason}")]
    InfeasibleTotal { total: u64, reason: String },

    #[error("cannot allocate {requested} of {available}")]
    InfeasibleAllocation { requested: u64, available: u64 },

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("number of levels must be positive")]
    NonPositiveLevels,

    #[error("privacy budget must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("size bound must be at least 1")]
    InvalidSizeBound,

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("degenerate tail ratio: {0}")]
    DegenerateRatio(String),

    #[error("hierarchy structure: {0}")]
    Structure(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: entity references unknown group `{group}`")]
    MissingGroup { path: PathBuf, line: u64, group: String },

    #[error("{path}:{line}: group references unknown region `{region}`")]
    MissingRegion { path: PathBuf, line: u64, region: String },

    #[error("{path}:{line}: duplicate id `{id}`")]
    DuplicateId { path: PathBuf, line: u64, id: String },

    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow { path: PathBuf, line: u64, reason: String },

    #[error("histogram format: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
