use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("cannot parse {value:?} at row {row}, column {column} as a finite number")]
    Parse {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("response column {0} not found")]
    MissingResponse(String),

    #[error("classification requires exactly two distinct labels, found {0}")]
    LabelCount(usize),

    #[error("dataset has no rows")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular linear system (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("leave-one-out denominator 1 - l''(u)h = {denominator:e} at observation {index}")]
    Pole { index: usize, denominator: f64 },

    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

impl Error {
    /// True for failures caused by input data rather than numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv { .. }
                | Error::Parse { .. }
                | Error::MissingResponse(_)
                | Error::LabelCount(_)
                | Error::EmptyDataset
                | Error::InvalidDataset(_)
        )
    }
}
