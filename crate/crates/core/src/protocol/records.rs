use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::write_atomic;
use super::{ProtocolError, RunRecord};

/// `records/<config hash>-s<seed>.jsonl` under the workspace.
pub fn record_path(records_dir: &Path, config_hash: &str, seed: u64) -> PathBuf {
    records_dir.join(format!("{config_hash}-s{seed}.jsonl"))
}

pub fn write_record(records_dir: &Path, record: &RunRecord) -> Result<PathBuf, ProtocolError> {
    let path = record_path(records_dir, &record.config_hash, record.seed);
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    write_atomic(&path, &line)?;
    Ok(path)
}

/// Every record in `*.jsonl` files of a directory, ordered by file name.
/// A missing directory holds no records.
pub fn read_records(records_dir: &Path) -> Result<Vec<RunRecord>, ProtocolError> {
    if !records_dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(records_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    files.sort();
    let mut out = Vec::new();
    for file in files {
        let text = fs::read_to_string(&file)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(line).map_err(|e| ProtocolError::Record {
                file: file.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            out.push(record);
        }
    }
    Ok(out)
}
