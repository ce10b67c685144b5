use thiserror::Error;

/// Errors surfaced by every fallible operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong dimension for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A scalar or structural parameter was outside its legal range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    /// An operation received an empty collection it cannot work with.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// The requested age has no samples in the dataset.
    #[error("no samples with age {0}")]
    AgeNotPresent(u16),

    /// The requested identity has no samples in the dataset.
    #[error("no samples with identity {0}")]
    IdentityNotPresent(u32),

    /// Training requires at least one quartet (two identities sharing two ages).
    #[error("dataset admits no quartets: need two identities observed at two common ages")]
    NoQuartets,

    /// The objective or a parameter became NaN/infinite during training.
    #[error("non-finite objective at epoch {epoch}; reduce the learning rate")]
    NonFiniteLoss { epoch: usize },

    /// A sample id referenced by a query or CLI flag does not exist.
    #[error("sample id {0:?} not found")]
    UnknownSampleId(String),

    /// A file did not conform to the expected on-disk layout.
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    /// Text parse failure with a 1-based line number where known.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for `InvalidParam` with a formatted reason.
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    /// Shorthand for `Format` errors.
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
