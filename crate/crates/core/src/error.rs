use std::path::PathBuf;

/// Error type shared by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("missing saved activations for {op} backward")]
    MissingSaved { op: &'static str },

    #[error("non-finite gradient in parameter {index}; step rejected")]
    NonFiniteGradient { index: usize },

    #[error("training diverged at step {step}: {stage} loss is not finite")]
    Diverged { step: usize, stage: &'static str },

    #[error("model format version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("malformed annotation {}: byte offset {offset}: {msg}", path.display())]
    Annotation { path: PathBuf, offset: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },

    #[error("unsatisfiable scene layout after {attempts} placement attempts: {msg}")]
    Layout { attempts: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

impl Error {
    /// Short stable tag used in machine-parsable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape",
            Error::InvalidArgument(_) => "argument",
            Error::NonFinite { .. } => "non_finite",
            Error::MissingSaved { .. } => "missing_saved",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::Diverged { .. } => "diverged",
            Error::VersionMismatch { .. } => "version",
            Error::Format(_) => "format",
            Error::Annotation { .. } => "annotation",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Layout { .. } => "layout",
            Error::Config(_) => "config",
            Error::EmptyDataset(_) => "empty_dataset",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
