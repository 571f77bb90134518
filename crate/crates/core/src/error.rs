use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("detector assignment is not a permutation of 0..{dimension}")]
    NotAPermutation { dimension: usize },

    #[error("attack infeasible: {0}")]
    AttackInfeasible(String),

    #[error("insufficient test data: {0}")]
    InsufficientTestData(String),

    #[error("no extractable rounds: no single-click events in the Z basis")]
    NoExtractableRounds,

    #[error("dimension {0} is not a power of two; symbols cannot be serialized as bits")]
    UnsupportedSerialization(usize),

    #[error("dimension {0} unsupported by the legacy gain model (requires d = 2)")]
    UnsupportedDimension(usize),

    #[error("length mismatch: expected {expected} bits, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("inconsistent analysis: {0}")]
    InconsistentAnalysis(String),

    #[error("sequence too short: need at least {required} bits, got {actual}")]
    SequenceTooShort { required: usize, actual: usize },

    #[error("record field `{field}`: {reason}")]
    Record { field: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn record(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Record { field: field.into(), reason: reason.into() }
    }

    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } | Error::NotAPermutation { .. } => "invalid-input",
            Error::AttackInfeasible(_) => "attack-infeasible",
            Error::InsufficientTestData(_) => "insufficient-test-data",
            Error::NoExtractableRounds => "no-extractable-rounds",
            Error::UnsupportedSerialization(_) | Error::UnsupportedDimension(_) => "unsupported",
            Error::LengthMismatch { .. } | Error::SequenceTooShort { .. } => "length",
            Error::InconsistentAnalysis(_) => "inconsistent-analysis",
            Error::Record { .. } | Error::Parse(_) => "record",
        }
    }
}
