use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid phase-type distribution: {0}")]
    InvalidPh(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("bad data: {0}")]
    Data(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("no probability mass on levels 0..={max_level}")]
    DegenerateMass { max_level: usize },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("test group {group} starved: {have}/{want} records after {draws} draws")]
    GroupStarved {
        group: u8,
        have: usize,
        want: usize,
        draws: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
