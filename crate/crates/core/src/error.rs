use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: &'static str, reason: String },

    #[error("schema error: missing column `{column}`")]
    Schema { column: String },

    #[error("data error at row {row}: {reason}")]
    Data { row: usize, reason: String },

    #[error("merge error: {0}")]
    Merge(String),

    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("argument error: {0}")]
    Argument(String),

    #[error("balance error: {0}")]
    Balance(String),

    #[error("minority class has {minority} samples but k = {k} needs at least {}; retry with k <= {}", k + 1, minority.saturating_sub(1))]
    MinorityTooSmall { minority: usize, k: usize },

    #[error("incompatible model: {0}")]
    Compatibility(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("cannot resume at phase {phase}: {reason}")]
    Resume { phase: usize, reason: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("checkpoint store: {0}")]
    Store(String),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config { field, reason: reason.into() }
    }

    pub(crate) fn shape(expected: impl core::fmt::Display, actual: impl core::fmt::Display) -> Self {
        use alloc::string::ToString;
        Error::Shape { expected: expected.to_string(), actual: actual.to_string() }
    }
}
