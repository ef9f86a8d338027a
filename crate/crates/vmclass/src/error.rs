//! Crate-wide error type.
//!
//! Every variant carries a short machine-parseable code so the CLI can emit
//! a stable `error_code=...` line next to the human-readable message.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing required column '{column}' in trace header")]
    MissingColumn { column: String },

    #[error("line {line}: bad value '{value}' for column '{column}': {reason}")]
    BadRow {
        line: u64,
        column: String,
        value: String,
        reason: String,
    },

    #[error("dataset is malformed: {0}")]
    MalformedDataset(String),

    #[error("record has deleted < created ({deleted} < {created})")]
    NegativeLifetime { created: f64, deleted: f64 },

    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("split fractions must sum to 1 (got {0})")]
    BadFractions(f64),

    #[error("balancing requires both classes to be present")]
    SingleClass,

    #[error("smote k={k} must be smaller than the minority class size {minority}")]
    SmoteKTooLarge { k: usize, minority: usize },

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid architecture: {0}")]
    BadArchitecture(String),

    #[error("dropout rate must be in [0, 1), got {0}")]
    BadDropoutRate(f64),

    #[error("checkpoint is not readable: {0}")]
    BadCheckpoint(String),

    #[error("the {split} split is empty")]
    EmptySplit { split: String },

    #[error("host '{host}' has no VMs")]
    EmptyHost { host: String },

    #[error("host '{host}': {reason}")]
    BadHost { host: String, reason: String },

    #[error("vm '{vm_id}': {reason}")]
    BadVmRuntime { vm_id: String, reason: String },

    #[error("unknown policy '{name}'; valid policies: {valid}")]
    UnknownPolicy { name: String, valid: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable short code for scripting against CLI failures.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Csv(_) => "E_CSV",
            Error::MissingColumn { .. } => "E_SCHEMA",
            Error::BadRow { .. } => "E_ROW",
            Error::MalformedDataset(_) => "E_DATA",
            Error::NegativeLifetime { .. } => "E_LIFETIME",
            Error::TooFewRows { .. } => "E_TOO_FEW_ROWS",
            Error::BadFractions(_) => "E_FRACTIONS",
            Error::SingleClass => "E_SINGLE_CLASS",
            Error::SmoteKTooLarge { .. } => "E_SMOTE_K",
            Error::ShapeMismatch { .. } => "E_SHAPE",
            Error::BadArchitecture(_) => "E_ARCH",
            Error::BadDropoutRate(_) => "E_DROPOUT",
            Error::BadCheckpoint(_) => "E_CHECKPOINT",
            Error::EmptySplit { .. } => "E_EMPTY_SPLIT",
            Error::EmptyHost { .. } => "E_EMPTY_HOST",
            Error::BadHost { .. } => "E_HOST",
            Error::BadVmRuntime { .. } => "E_VM",
            Error::UnknownPolicy { .. } => "E_POLICY",
            Error::Config(_) => "E_CONFIG",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
