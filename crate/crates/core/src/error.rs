//! Error type shared by all pipeline stages.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {path}")]
    MissingFile { path: PathBuf },

    #[error("dimension mismatch in {path} field {field}: expected {expected}, got {actual}")]
    DimensionMismatch {
        path: PathBuf,
        field: String,
        expected: String,
        actual: String,
    },

    #[error("malformed header in {path}: field {field}: {msg}")]
    MalformedHeader {
        path: PathBuf,
        field: String,
        msg: String,
    },

    #[error("insufficient data for {what}: need {needed}, got {got}")]
    InsufficientData {
        what: String,
        needed: usize,
        got: usize,
    },

    #[error("degenerate geometry in {what}")]
    DegenerateGeometry { what: String },

    #[error("invalid state: {what}")]
    InvalidState { what: String },

    #[error("{what} out of range: {value} not in [{lo}, {hi}]")]
    OutOfRange {
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("search space too large for {what}: {size} candidates exceeds bound {bound}")]
    ExplicitBound {
        what: String,
        size: u64,
        bound: u64,
    },

    #[error("non-finite loss at iteration {iter} (last checkpoint: {last_checkpoint:?})")]
    NonFiniteLoss {
        iter: usize,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. }
            | Error::MissingFile { .. }
            | Error::DimensionMismatch { .. }
            | Error::MalformedHeader { .. }
            | Error::InsufficientData { .. }
            | Error::InvalidState { .. }
            | Error::OutOfRange { .. }
            | Error::ShapeMismatch { .. }
            | Error::ExplicitBound { .. } => 3,
            Error::DegenerateGeometry { .. } | Error::NonFiniteLoss { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "data",
            _ => "numeric",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
