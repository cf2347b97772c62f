use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid arguments or parameters supplied by the caller.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input. `location` names a byte offset or line/column.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Operands whose shapes cannot be combined.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A measure whose defining formula has no value for this input
    /// (zero variance, empty cells and the like).
    #[error("undefined measure: {0}")]
    Undefined(String),

    /// Design matrix without full column rank.
    #[error("rank-deficient design: {} is collinear with earlier columns", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("evaluation error: unseen architecture level(s) {}", .levels.join(", "))]
    UnseenLevel { levels: Vec<String> },

    /// Input data that violates a documented precondition.
    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    /// Stable machine-readable code used in JSON error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::NotFound(_) => "input_not_found",
            Error::Io(_) => "io",
            Error::Parse { .. } => "parse",
            Error::InsufficientData(_) => "insufficient_data",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Undefined(_) => "undefined",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::UnseenLevel { .. } => "unseen_level",
            Error::Data(_) => "data",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
