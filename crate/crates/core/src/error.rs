use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix completion: {axis} {index} has no observed entries")]
    EmptyLine { axis: &'static str, index: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: row {row}: {msg}")]
    Schema {
        file: String,
        row: usize,
        msg: String,
    },

    #[error("{file}: row {row}: unknown unit_id {unit_id}")]
    DanglingUnit {
        file: String,
        row: usize,
        unit_id: u64,
    },

    #[error("dataset inconsistent: {0}")]
    Consistency(String),

    #[error("unsupported format version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("cell (experiment {experiment}, arm {arm}, metric {metric}) has {count} observations, need at least {need}")]
    SparseCell {
        experiment: usize,
        arm: usize,
        metric: usize,
        count: usize,
        need: usize,
    },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("missing entries: {0}")]
    Missing(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for failures of the numerical kind (exit code 3 in the CLI).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular(_) | Error::Divergence { .. })
    }
}
