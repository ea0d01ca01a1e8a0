use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite state encountered at observation step {step}")]
    Divergence { step: usize },

    #[error("sample {index} diverged with z_e = {z_e:?}, z_a = {z_a:?}")]
    SampleDiverged { index: usize, z_e: Vec<f64>, z_a: Vec<f64> },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gradient reached frozen parameter `{0}`")]
    FrozenParameter(String),

    #[error(
        "bad container magic: expected {:?}, found {:?}",
        String::from_utf8_lossy(expected),
        String::from_utf8_lossy(found)
    )]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported container version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("truncated container: {0}")]
    Truncated(String),

    #[error("malformed container: {0}")]
    Malformed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("too many augmented samples diverged: {skipped} of {requested}")]
    TooManySkipped { skipped: usize, requested: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, shapes: &[&[usize]]) -> Self {
        Error::Shape { op, shapes: shapes.iter().map(|s| s.to_vec()).collect() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
