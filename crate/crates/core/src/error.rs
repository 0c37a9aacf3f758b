use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("template is already boundary-stripped ({rows}x{cols})")]
    AlreadyStripped { rows: usize, cols: usize },

    #[error("cannot stack resolutions: {0}")]
    Stacking(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("masks share no usable bits")]
    EmptyOverlap,

    #[error("manifest line {line}: {message}")]
    Manifest { line: u64, message: String },

    #[error("duplicate manifest key (identity {identity_id:?}, sample {sample_id:?})")]
    DuplicateSample {
        identity_id: String,
        sample_id: String,
    },

    #[error("no template for sample {sample_id:?} at {path}")]
    MissingTemplate { sample_id: String, path: PathBuf },

    #[error("score store was written for {stored}, but {requested} was requested")]
    ConfigMismatch { stored: String, requested: String },

    #[error("corrupt score store: {0}")]
    CorruptStore(String),

    #[error("score store {path} is incomplete ({done} of {total} chunks)")]
    IncompleteStore {
        path: PathBuf,
        done: u64,
        total: u64,
    },

    #[error("bad template file: {0}")]
    Format(String),

    #[error("score set is empty")]
    EmptyScores,

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
