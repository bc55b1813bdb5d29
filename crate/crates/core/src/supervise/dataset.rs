//! JSON-lines dataset: one record per circuit.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::LabelSet;
use crate::simulate::Workload;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// AIGER file, relative to the dataset file's directory.
    pub circuit_path: String,
    pub workload: Workload,
    #[serde(flatten)]
    pub labels: LabelSet,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_dataset<W: Write>(records: &[DatasetRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads every non-blank line as a record.
pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| DatasetError::Parse { line: k + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}
