use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug)]
pub enum Error {
    /// Operand shapes are incompatible for `op`.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An index fell outside `[0, bound)`.
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    /// A sequence exceeds the model's position table.
    Length { length: usize, max: usize },
    /// A caller broke a documented precondition.
    Contract(String),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A document in the corpus could not be decoded.
    Document { name: String, reason: String },
    /// A file did not follow its expected layout.
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    /// Checkpoint manifest and payload disagree.
    Integrity {
        expected_bytes: u64,
        actual_bytes: u64,
    },
    NonFinite { step: u64, batch: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Self::Contract(msg.into())
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, reason: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shape { op, lhs, rhs } => {
                write!(f, "shape mismatch in {op}: lhs={lhs:?}, rhs={rhs:?}")
            }
            Self::Index { what, index, bound } => {
                write!(f, "{what} index {index} out of range (bound {bound})")
            }
            Self::Length { length, max } => {
                write!(f, "sequence length {length} exceeds max positions {max}")
            }
            Self::Contract(msg) => write!(f, "contract violation: {msg}"),
            Self::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Self::Document { name, reason } => write!(f, "unreadable document {name}: {reason}"),
            Self::Format { path, line, reason } => {
                write!(f, "{}:{line}: {reason}", path.display())
            }
            Self::Integrity {
                expected_bytes,
                actual_bytes,
            } => write!(
                f,
                "checkpoint integrity error: expected {expected_bytes} payload bytes, found {actual_bytes}"
            ),
            Self::NonFinite { step, batch } => {
                write!(f, "non-finite loss at step {step} (batch {batch})")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
