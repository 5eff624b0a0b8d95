use std::fmt;
use std::io;

/// Errors raised anywhere in the library.
#[derive(Debug)]
pub enum Error {
    /// A precondition on an argument or configuration value failed.
    Validation(String),
    /// A patch whose mean-centered variance is at or below the floor.
    DegeneratePatch { variance: f64 },
    /// An operation produced a non-finite value.
    Overflow { op: String },
    /// A training loss term became non-finite.
    TrainingAbort { term: String, epoch: usize, step: usize },
    /// Too few positive/negative examples for an estimation strategy.
    InsufficientSupport { strategy: String, n_pos: usize, n_neg: usize },
    /// A text file failed to parse.
    Parse { path: String, line: usize, message: String },
    /// Checkpoint does not start with the expected magic bytes.
    BadMagic,
    /// Checkpoint magic is recognised but the version is not.
    UnsupportedVersion(u8),
    /// Checkpoint payload ends before the manifest says it should.
    Truncated { expected: u64, actual: u64 },
    /// Checkpoint entries disagree with the parameter store.
    ManifestMismatch(String),
    Io(io::Error),
    /// A pipeline stage failed.
    Stage { stage: &'static str, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn overflow(op: impl Into<String>) -> Self {
        Error::Overflow { op: op.into() }
    }

    /// The underlying error, with stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::DegeneratePatch { variance } => {
                write!(f, "degenerate patch: centered variance {variance:e} is at or below the floor")
            }
            Error::Overflow { op } => write!(f, "non-finite value produced by `{op}`"),
            Error::TrainingAbort { term, epoch, step } => {
                write!(f, "training aborted at epoch {epoch} step {step}: `{term}` is not finite")
            }
            Error::InsufficientSupport { strategy, n_pos, n_neg } => write!(
                f,
                "insufficient support for strategy `{strategy}` ({n_pos} positive, {n_neg} negative)"
            ),
            Error::Parse { path, line, message } => write!(f, "{path}:{line}: {message}"),
            Error::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            Error::UnsupportedVersion(v) => write!(f, "unsupported checkpoint version {v}"),
            Error::Truncated { expected, actual } => {
                write!(f, "checkpoint truncated: expected {expected} bytes, found {actual}")
            }
            Error::ManifestMismatch(msg) => write!(f, "checkpoint manifest mismatch: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Stage { stage, source } => write!(f, "stage `{stage}` failed: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Stage { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
