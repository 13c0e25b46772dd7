use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pose pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion has zero norm")]
    DegenerateQuaternion,

    #[error("{0}: sequence is empty")]
    EmptySequence(&'static str),

    #[error("point lies on the camera plane (depth {depth:e})")]
    PointAtCameraPlane { depth: f64 },

    #[error("shape error in `{op}`: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("image {height}x{width} is not divisible by patch size {patch}")]
    PatchSize {
        height: usize,
        width: usize,
        patch: usize,
    },

    #[error("{got} views exceed the embedding table size {max}")]
    TooManyViews { got: usize, max: usize },

    #[error("residual is not finite: {0}")]
    NonFiniteResidual(f64),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NanGradient(String),

    #[error("non-finite loss at step {0}")]
    NanLoss(usize),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
