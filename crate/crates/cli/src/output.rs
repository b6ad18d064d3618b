//! Output files: RFC 4180 CSV, JSON, and the per-step metadata sidecars.
//! Every file is written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const CKA_CSV: &str = "cka.csv";
pub const VARIANCE_CSV: &str = "variance.csv";
pub const VARIANCE_MEANS_CSV: &str = "variance_means.csv";
pub const READABILITY_CSV: &str = "readability.csv";
pub const CORRELATION_CSV: &str = "correlation.csv";
pub const TSNE_CSV: &str = "tsne.csv";
pub const SEGMENTATION_JSON: &str = "segmentation.json";
pub const PROFILES_CSV: &str = "profiles.csv";
pub const REPORT_JSON: &str = "report.json";

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Output(format!("creating {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Output(format!("temp file in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.flush())
        .map_err(|e| CliError::Output(format!("writing {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Output(format!("renaming onto {}: {e}", path.display())))?;
    Ok(())
}

/// Serializes `rows` as CSV with a header row and CRLF line endings.
pub fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .has_headers(false)
        .from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Output(format!("CSV encoding: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Output(format!("CSV encoding: {e}")))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> CliResult<()> {
    write_atomic(path, &csv_bytes(rows, header)?)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    if !path.exists() {
        return Err(CliError::MissingUpstream(format!("{} not found", path.display())));
    }
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Output(format!("JSON encoding: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, &json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|_| CliError::MissingUpstream(format!("{} not found", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Written next to each step's outputs so later steps can detect that the
/// manifest changed in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMeta {
    pub step: String,
    pub manifest_sha256: String,
    pub outputs: Vec<String>,
}

pub fn meta_path(out: &Path, step: &str) -> PathBuf {
    out.join(format!("{step}.meta.json"))
}

pub fn write_meta(out: &Path, step: &str, manifest_sha256: &str, outputs: &[&str]) -> CliResult<()> {
    let meta = StepMeta {
        step: step.to_string(),
        manifest_sha256: manifest_sha256.to_string(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    write_json(&meta_path(out, step), &meta)
}
