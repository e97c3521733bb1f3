//! Experiment records (newline-delimited JSON), config hashing and the
//! leakage report CSV.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use varleak::leakage::MiEstimate;

use crate::error::{Abort, CliResult};
use crate::spec::SCHEMA_VERSION;

/// SHA-256 of the canonical JSON form of `config`, hex encoded.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryResult {
    pub data_ratio: f64,
    pub accuracy: f64,
    pub cross_entropy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityTriple {
    pub kl_upper: f64,
    pub correction: f64,
    pub corrected: f64,
}

/// One sweep point for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema: u32,
    pub config_hash: String,
    pub status: Status,
    pub beta: f64,
    pub dz: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub util_acc_train: Option<f64>,
    #[serde(default)]
    pub util_acc_val: Option<f64>,
    #[serde(default)]
    pub util_acc_test: Option<f64>,
    #[serde(default)]
    pub adversary: Vec<AdversaryResult>,
    #[serde(default)]
    pub mi_sz: Option<MiEstimate>,
    #[serde(default)]
    pub mi_uz: Option<MiEstimate>,
    #[serde(default)]
    pub complexity: Option<ComplexityTriple>,
    pub wall_seconds: f64,
}

impl ExperimentRecord {
    pub fn failed(config_hash: String, beta: f64, dz: usize, seed: u64, error: String, wall_seconds: f64) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            config_hash,
            status: Status::Failed,
            beta,
            dz,
            seed,
            error: Some(error),
            util_acc_train: None,
            util_acc_val: None,
            util_acc_test: None,
            adversary: Vec::new(),
            mi_sz: None,
            mi_uz: None,
            complexity: None,
            wall_seconds,
        }
    }
}

/// Appends one line to `path` while holding an exclusive lock on it, so
/// concurrent workers never interleave partial lines.
pub fn append_line(path: &Path, line: &str) -> CliResult<()> {
    let mut file = OpenOptions::new().create(true).read(true).append(true).open(path).aborted("cannot open records file")?;
    file.lock().aborted("cannot lock records file")?;
    let result = ends_mid_line(&mut file)
        .and_then(|torn| if torn { writeln!(file) } else { Ok(()) })
        .and_then(|_| writeln!(file, "{line}"))
        .and_then(|_| file.flush());
    file.unlock().aborted("cannot unlock records file")?;
    result.aborted("cannot append record")
}

// A crash mid-write leaves a partial last line; the next record must not
// be glued onto it.
fn ends_mid_line(file: &mut File) -> std::io::Result<bool> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(false);
    }
    let mut last = [0u8; 1];
    file.seek(SeekFrom::Start(len - 1))?;
    file.read_exact(&mut last)?;
    Ok(last[0] != b'\n')
}

pub fn append_record(path: &Path, record: &ExperimentRecord) -> CliResult<()> {
    append_line(path, &serde_json::to_string(record).expect("record serializes"))
}

/// Reads every parseable record; unparseable lines (e.g. a torn final
/// line after a crash) are skipped with a warning.
pub fn read_records(path: &Path) -> CliResult<Vec<ExperimentRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).aborted("cannot read records file")?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.aborted("cannot read records file")?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("skipping record line {}: {e}", i + 1),
        }
    }
    Ok(out)
}

pub fn completed_hashes(records: &[ExperimentRecord]) -> HashSet<String> {
    records.iter().filter(|r| r.status == Status::Ok).map(|r| r.config_hash.clone()).collect()
}

/// One row of an attack or estimate report. Columns a command does not
/// measure stay empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub beta: Option<f64>,
    pub dz: usize,
    pub data_ratio: Option<f64>,
    pub adv_acc: Option<f64>,
    pub adv_xent: Option<f64>,
    pub mi_sz_mine: Option<f64>,
    pub mi_uz_mine: Option<f64>,
    pub kl_upper: Option<f64>,
    pub kl_correction: Option<f64>,
}

/// Appends rows to a report CSV, writing the header only for a new file.
pub fn append_report(path: &Path, rows: &[ReportRow]) -> CliResult<()> {
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path).aborted("cannot open report")?;
    file.lock().aborted("cannot lock report")?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(&file);
    for row in rows {
        w.serialize(row).aborted("cannot write report row")?;
    }
    w.flush().aborted("cannot write report")?;
    drop(w);
    file.unlock().aborted("cannot unlock report")
}
