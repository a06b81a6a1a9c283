use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-manifold one-ring at vertex {vertex}: {msg}")]
    NonManifold { vertex: usize, msg: String },
    #[error("decimation stuck at {reached} vertices (target {target}): no legal contraction left")]
    DecimationStuck { reached: usize, target: usize },
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward called on non-scalar tensor of shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("every attention key is masked")]
    AllMasked,
    #[error("no supervised slot in sequence")]
    NoSupervisedSlot,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("config error in {file}: key `{key}`: {msg}")]
    Config {
        file: String,
        key: String,
        msg: String,
    },
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Short machine-parsable tag used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "ParseError",
            Error::Validation(_) => "ValidationError",
            Error::Io { .. } => "IoError",
            Error::NonManifold { .. } => "NonManifoldError",
            Error::DecimationStuck { .. } => "DecimationStuckError",
            Error::Shape { .. } => "ShapeError",
            Error::NonScalar(_) => "NonScalarError",
            Error::AllMasked => "AllMaskedError",
            Error::NoSupervisedSlot => "NoSupervisedSlotError",
            Error::Divergence { .. } => "DivergenceError",
            Error::Manifest(_) => "ManifestError",
            Error::Config { .. } => "ConfigError",
            Error::Format(_) => "FormatError",
        }
    }
}
