use std::path::PathBuf;

use posekan_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: record {record}: {message}")]
    Record { path: PathBuf, record: usize, message: String },
    #[error("{path}: not a {expected} file")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("{path}: format version {found}, this build reads {supported}")]
    VersionMismatch { path: PathBuf, found: u32, supported: u32 },
    #[error("{path}: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CorruptChecksum { path: PathBuf, stored: u32, computed: u32 },
    #[error("{path}: truncated file")]
    Truncated { path: PathBuf },
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("checkpoint holds {found} parameters, architecture needs {expected}")]
    ParameterCount { expected: usize, found: usize },
    #[error("verification failed: {0}")]
    Verification(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Process exit status for configuration problems.
pub const EXIT_CONFIG: i32 = 1;
/// Process exit status for unreadable or malformed data.
pub const EXIT_DATA: i32 = 2;
/// Process exit status for numeric failures.
pub const EXIT_NUMERIC: i32 = 3;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { key: key.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => EXIT_CONFIG,
            Error::Verification(_) => EXIT_NUMERIC,
            Error::Core(e) => match e {
                CoreError::ScalingOutOfRange(_) | CoreError::BadConfig(_) | CoreError::BadDimensions(_) => EXIT_CONFIG,
                CoreError::NonFiniteGradient(_)
                | CoreError::NonFiniteLoss { .. }
                | CoreError::NonFiniteInput(_)
                | CoreError::SingularFrequency(_)
                | CoreError::StaleCache(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            },
            _ => EXIT_DATA,
        }
    }
}
