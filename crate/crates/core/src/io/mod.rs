//! File formats: panel ingestion, binary draw stores and CSV tables.

pub mod binary;
pub mod ingest;
pub mod tables;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Identifies the run that produced an output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn comment_line(&self) -> String {
        format!("# config_hash={};seed={}\n", self.config_hash, self.seed)
    }
}

/// CSV writer whose first line is the provenance comment.
pub fn create_csv(path: &Path, prov: &Provenance) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(prov.comment_line().as_bytes())?;
    Ok(csv::Writer::from_writer(file))
}

/// CSV reader that skips `#` comment lines.
pub fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(File::open(path)?))
}
