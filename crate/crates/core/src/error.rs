use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value, preset name, or flag combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor shapes that do not fit together.
    #[error("shape error: {0}")]
    Shape(String),

    /// A teacher cannot provide a requested distillation point.
    #[error("capability error: {0}")]
    Capability(String),

    /// Input values violating a precondition (empty mask, NaN, unnormalized distribution).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Malformed file contents.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    /// Process exit code for command-line front ends.
    ///
    /// 2 = configuration, 3 = capability or shape, 4 = I/O or file format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Shape(_) | Error::Capability(_) | Error::InvalidInput(_) => 3,
            Error::Format { .. } | Error::Io { .. } => 4,
        }
    }
}
