use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("operator carries phases; use the phased operation")]
    PhasePresent,
    #[error("operator has no phases; the phased operation needs both phase vectors")]
    PhaseAbsent,
    #[error("invalid temperature {0} (must be finite and > 0)")]
    InvalidTemperature(f64),
    #[error("dense size cap exceeded: {entries} entries > cap {cap}")]
    SizeCapExceeded { entries: usize, cap: usize },
    #[error("length {0} is not a power of two")]
    NonPowerOfTwo(usize),
    #[error("cotangent matrix is not symmetric (max deviation {0:e})")]
    AsymmetricCotangent(f64),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("divergence detected at step {step}: loss = {loss}")]
    DivergenceDetected { step: usize, loss: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model file: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
