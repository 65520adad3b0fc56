use thiserror::Error;

/// Errors produced by the estimation, simulation and I/O routines.
#[derive(Debug, Error)]
pub enum SvfError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("non-rectangular table: row {row} has {found} fields, expected {expected}")]
    NonRectangular {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("unparsable numeric cell at row {row}, column {col}: {value:?}")]
    Parse { row: usize, col: usize, value: String },

    #[error("empty series: column {0} has no observed values")]
    EmptySeries(usize),

    #[error("zero variance in column {0}")]
    ZeroVariance(usize),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular rotation matrix (|det H| = {0:e})")]
    Singular(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("schema version mismatch: file has {found:?}, expected {expected:?}")]
    SchemaVersion { found: String, expected: String },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),
}

/// Coarse classification used by the command-line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl SvfError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            SvfError::InvalidArgument(_) => ErrorKind::Usage,
            SvfError::Singular(_) | SvfError::Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    /// Short machine-readable tag.
    pub fn tag(&self) -> &'static str {
        match self {
            SvfError::Io(_) => "io",
            SvfError::Csv(_) => "csv",
            SvfError::Json(_) => "json",
            SvfError::NonRectangular { .. } => "non_rectangular",
            SvfError::Parse { .. } => "parse",
            SvfError::EmptySeries(_) => "empty_series",
            SvfError::ZeroVariance(_) => "zero_variance",
            SvfError::InsufficientData { .. } => "insufficient_data",
            SvfError::DimensionMismatch { .. } => "dimension_mismatch",
            SvfError::InvalidArgument(_) => "invalid_argument",
            SvfError::Singular(_) => "singular",
            SvfError::Numerical(_) => "numerical",
            SvfError::SchemaVersion { .. } => "schema_version",
            SvfError::CorruptModel(_) => "corrupt_model",
        }
    }
}

pub type Result<T> = std::result::Result<T, SvfError>;
