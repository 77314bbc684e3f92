use std::path::PathBuf;

/// Crate-wide error type. Variants map onto process exit codes, so the CLI
/// can report config, data, and training failures distinctly.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument for {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("condensation request failed: {0}")]
    Condenser(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 config, 3 data, 4 divergence,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument { .. } => 2,
            Error::Data(_) | Error::Condenser(_) => 3,
            Error::Diverged(_) => 4,
            _ => 1,
        }
    }

    /// Stable machine-readable kind tag used in error JSON output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Diverged(_) => "divergence",
            Error::Shape { .. } => "shape",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::Io { .. } => "io",
            Error::Condenser(_) => "condenser",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
