use std::path::PathBuf;

/// Errors raised across the prompting engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),

    #[error("affine matrix is singular (|det| = {det:e} < 1e-6)")]
    AffineSingular { det: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("tape does not match the supplied tensors: {0}")]
    TapeMismatch(String),

    #[error("bad magic number: {0}")]
    BadMagic(String),

    #[error("unsupported tensor file version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload while reading {0}")]
    TruncatedPayload(String),

    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),

    #[error("missing tensor `{0}`")]
    MissingEntry(String),

    #[error("scale {0} outside the open interval (0, 1)")]
    ScaleOutOfRange(f64),

    #[error("class count {0} outside 2..=8")]
    BadClassCount(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("model has {model} classes but data has {data}")]
    ClassMismatch { model: usize, data: usize },

    #[error("no corruption kinds requested")]
    EmptyKinds,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("at training step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
