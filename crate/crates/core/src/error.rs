use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("scene sampling failed after {attempts} attempts: {what}")]
    Sampling { what: String, attempts: usize },
    #[error("shape mismatch in layer `{layer}`: {detail}")]
    Shape { layer: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("{what} mismatch: expected {expected}, found {found}")]
    HashMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("truncated file {path}: last complete record index is {last_valid:?}")]
    Truncated {
        path: PathBuf,
        last_valid: Option<usize>,
    },
    #[error("non-finite value at batch {batch}: {detail}")]
    NonFinite { batch: usize, detail: String },
    #[error("label entailment violated at sample {index}: S_T=1 with S_G=0")]
    LabelEntailment { index: usize },
    #[error("config error at `{field}`: {detail}")]
    Config { field: String, detail: String },
    #[error("missing prerequisite for stage `{stage}`: {detail}")]
    MissingPrerequisite { stage: String, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
