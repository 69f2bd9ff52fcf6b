//! CSV rows shared by every experiment.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Header row, in column order. Changing it is a schema change.
pub const CSV_HEADER: &str =
    "experiment,method,precision,n,k,batch,feature_count,trial,wall_ns,peak_bytes,rel_err_l2,seed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    BenchMatvec,
    Accuracy,
    BenchGram,
    ToeplitzCompare,
    RffTradeoff,
    CountsketchDemo,
    DensityDemo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Laplex,
    Dense,
    ToeplitzFft,
    Rff,
    Countsketch,
}

impl std::str::FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "laplex" => Ok(Self::Laplex),
            "dense" => Ok(Self::Dense),
            "toeplitz_fft" => Ok(Self::ToeplitzFft),
            "rff" => Ok(Self::Rff),
            "countsketch" => Ok(Self::Countsketch),
            other => Err(BenchError::InvalidFlag(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub experiment: Experiment,
    pub method: Method,
    pub precision: Precision,
    pub n: usize,
    pub k: usize,
    pub batch: usize,
    /// `-1` when the method has no feature count.
    pub feature_count: i64,
    pub trial: usize,
    pub wall_ns: u64,
    /// `-1` when allocation tracking is unavailable.
    pub peak_bytes: i64,
    /// `-1` when no error was measured.
    pub rel_err_l2: f64,
    pub seed: u64,
}

pub fn write_csv<W: Write>(sink: W, records: &[BenchRecord]) -> Result<(), BenchError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, records: &[BenchRecord]) -> Result<(), BenchError> {
    match path {
        Some(p) => {
            let file = std::fs::File::create(p).map_err(|e| BenchError::Io(format!("{}: {e}", p.display())))?;
            write_csv(std::io::BufWriter::new(file), records)
        }
        None => write_csv(std::io::stdout().lock(), records),
    }
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchRecord>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(BenchError::Io(format!("unexpected header {}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(BenchError::from)).collect()
}
