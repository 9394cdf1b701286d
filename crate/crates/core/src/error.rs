use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("backward already ran on this tape; build a new tape or call reset_grads")]
    StaleTape,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated {what}: expected {expected} bytes, got {actual}")]
    Truncated {
        what: String,
        expected: u64,
        actual: u64,
    },

    #[error("geometry mismatch: expected {expected}, got {actual}")]
    GeometryMismatch { expected: String, actual: String },

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("unknown subject {0}")]
    UnknownSubject(u16),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            reason: reason.into(),
        }
    }
}
