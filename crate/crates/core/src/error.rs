use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside schedule range [0, {end}]")]
    TimeOutOfRange { t: f64, end: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("model does not provide {0}")]
    Unsupported(&'static str),

    #[error("zero-norm reference")]
    ZeroNorm,

    #[error("size {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("watermark key is not Hermitian-symmetric at ({u}, {v})")]
    NonHermitian { u: usize, v: usize },

    #[error("empty key list")]
    EmptyKeys,

    #[error("malformed tensor file: {0}")]
    Tensor(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(x: &crate::State, what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
