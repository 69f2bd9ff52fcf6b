//! Experiment harness for the laplex operators: timing sweeps, accuracy
//! studies and small demos, all emitting one CSV schema.

pub mod alloc;
pub mod density_demo;
pub mod experiments;
pub mod record;
pub mod timing;

pub use experiments::RunOptions;
pub use record::{BenchRecord, Experiment, Method, Precision, CSV_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("invalid flag: {0}")]
    InvalidFlag(String),
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error(transparent)]
    Core(#[from] laplex::Error),
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Median of a non-empty sample (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
