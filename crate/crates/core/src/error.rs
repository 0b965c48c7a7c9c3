use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = KclError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KclError {
    #[error("row {0} has (near) zero L2 norm")]
    ZeroRow(usize),

    #[error("row {0} contains a non-finite value")]
    NonFinite(usize),

    #[error("row {0} is not unit-norm (norm = {1})")]
    NotNormalized(usize, f64),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("cache features given without cache labels")]
    MissingLabels,

    #[error("few-shot mode requires cache features and labels")]
    MissingCache,

    #[error("validation search requires a labeled validation split")]
    MissingValidation,

    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },

    #[error("beta/mu must be > 0, got {0}")]
    NonPositiveBeta(f64),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("modality mask must enable at least one of text/visual")]
    EmptyModality,

    #[error("test index {0} is not in the remaining set")]
    IndexNotRemaining(usize),

    #[error("hyperparameter grid is empty")]
    EmptyGrid,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },

    #[error("{path}: truncated payload (expected {expected} bytes, got {got})")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

impl KclError {
    /// True for failures caused by the filesystem or malformed files, as
    /// opposed to inconsistent inputs or parameters.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            KclError::Io { .. }
                | KclError::BadMagic { .. }
                | KclError::TruncatedPayload { .. }
                | KclError::Parse { .. }
        )
    }
}
