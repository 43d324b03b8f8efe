use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid manifest {}: {message}", path.display())]
    InvalidManifest { path: PathBuf, message: String },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("non-finite activation at layer {layer}, row {row}, col {col}")]
    NonFinite { layer: u32, row: usize, col: usize },

    #[error("non-binary value {value:?} at row {row}, column {column:?}")]
    NonBinaryValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("concept table has {found} rows, expected {expected}")]
    RowCountMismatch { expected: usize, found: usize },

    #[error("duplicate concept name {0:?}")]
    DuplicateConcept(String),

    #[error(
        "no concepts left after prevalence filtering (threshold {min_prevalence}); \
         lower --min-prevalence or check the concept labels"
    )]
    EmptyConceptSet { min_prevalence: u64 },

    #[error("unsupported schema version {found:?} (expected {expected:?})")]
    SchemaMismatch { expected: String, found: String },

    #[error("malformed {what}: {message}")]
    Malformed { what: String, message: String },

    #[error("not found: {0}")]
    NotFound(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn malformed(what: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Error::Malformed {
            what: what.into(),
            message: message.to_string(),
        }
    }

    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::MissingFile(_) => "MissingFile",
            Error::Io { .. } => "Io",
            Error::InvalidManifest { .. } => "InvalidManifest",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonFinite { .. } => "NonFinite",
            Error::NonBinaryValue { .. } => "NonBinaryValue",
            Error::RowCountMismatch { .. } => "RowCountMismatch",
            Error::DuplicateConcept(_) => "DuplicateConcept",
            Error::EmptyConceptSet { .. } => "EmptyConceptSet",
            Error::SchemaMismatch { .. } => "SchemaMismatch",
            Error::Malformed { .. } => "Malformed",
            Error::NotFound(_) => "NotFound",
        }
    }

    /// True for errors caused by bad input files or parameters, as opposed
    /// to failures during computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
