use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty peptide sequence")]
    EmptySequence,
    #[error("unknown residue '{residue}' at position {position}")]
    UnknownResidue { residue: char, position: usize },
    #[error("unsupported modification '{token}': {reason}")]
    UnsupportedModification { token: String, reason: String },
    #[error("malformed token at byte {offset}: {message}")]
    MalformedToken { offset: usize, message: String },
    #[error("peptide length {0} outside [1, 100]")]
    InvalidLength(usize),

    #[error("ion {0} is out of bounds for the canonical space")]
    OutOfBounds(String),
    #[error("ion position {position} is beyond peptide of length {length}")]
    PositionBeyondPeptide { position: usize, length: usize },
    #[error("mask has no valid positions")]
    EmptyMask,
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("native tensor does not match layout: {0}")]
    LayoutMismatch(String),

    #[error("prediction and truth masks differ")]
    MaskMismatch,
    #[error("record outside benchmark scope: {0}")]
    ScopeViolation(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("no rows left after filtering: {0}")]
    ScopeEmpty(String),

    #[error("record has no row identity (sample_key or row index) for row-level splitting")]
    MissingKeyColumn,
    #[error("sampling quota must be positive")]
    QuotaZero,

    #[error("no training rows")]
    EmptyTraining,
    #[error("model has no trained buckets")]
    EmptyModel,
    #[error("no prediction for {0}")]
    MissingPrediction(String),

    #[error("baseline bin '{0}' not present in table")]
    MissingBaselineBin(String),

    #[error("line {line}: {message}")]
    Schema { line: u64, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A row-level failure tagged with its 1-based input line.
    #[error("line {line}: {source}")]
    AtLine {
        line: u64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptySequence => "EmptySequence",
            Error::UnknownResidue { .. } => "UnknownResidue",
            Error::UnsupportedModification { .. } => "UnsupportedModification",
            Error::MalformedToken { .. } => "MalformedToken",
            Error::InvalidLength(_) => "InvalidLength",
            Error::OutOfBounds(_) => "OutOfBounds",
            Error::PositionBeyondPeptide { .. } => "PositionBeyondPeptide",
            Error::EmptyMask => "EmptyMask",
            Error::InvalidSpectrum(_) => "InvalidSpectrum",
            Error::LayoutMismatch(_) => "LayoutMismatch",
            Error::MaskMismatch => "MaskMismatch",
            Error::ScopeViolation(_) => "ScopeViolation",
            Error::EmptyInput(_) => "EmptyInput",
            Error::ScopeEmpty(_) => "ScopeEmpty",
            Error::MissingKeyColumn => "MissingKeyColumn",
            Error::QuotaZero => "QuotaZero",
            Error::EmptyTraining => "EmptyTraining",
            Error::EmptyModel => "EmptyModel",
            Error::MissingPrediction(_) => "MissingPrediction",
            Error::MissingBaselineBin(_) => "MissingBaselineBin",
            Error::Schema { .. } => "SchemaError",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
            Error::AtLine { source, .. } => source.kind(),
            Error::Csv(_) => "SchemaError",
            Error::Json(_) => "SchemaError",
        }
    }

    /// True for errors raised while interpreting a peptide string.
    pub fn is_peptide_error(&self) -> bool {
        matches!(
            self,
            Error::EmptySequence
                | Error::UnknownResidue { .. }
                | Error::UnsupportedModification { .. }
                | Error::MalformedToken { .. }
                | Error::InvalidLength(_)
        )
    }

    /// Input line the error refers to, if known.
    pub fn line(&self) -> Option<u64> {
        match self {
            Error::Schema { line, .. } | Error::AtLine { line, .. } => Some(*line),
            Error::Csv(e) => e.position().map(|p| p.line()),
            _ => None,
        }
    }

    pub(crate) fn at_line(self, line: u64) -> Self {
        match self {
            e @ (Error::Schema { .. } | Error::AtLine { .. }) => e,
            e => Error::AtLine {
                line,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
