//! Report and snapshot files.

use std::fs;
use std::path::{Path, PathBuf};

use parafed_core::federation::SiloState;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::experiment::Report;
use crate::{Error, Result};

#[derive(Serialize)]
struct RecordRow<'a> {
    query_id: u32,
    gold: &'a str,
    predicted: &'a str,
    exact_match: u8,
    token_f1: f64,
    broadcast_bytes: u64,
    candidate_upload_bytes: u64,
    adapter_request_bytes: u64,
    adapter_upload_bytes: u64,
    total_bytes: u64,
    adapters_transferred: u64,
    adapter_dedup_hits: u64,
}

pub fn join_tokens(tokens: &[u32]) -> String {
    tokens.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path)(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path)(e.to_string()))
}

/// Writes rows with `csv`, creating the parent directory.
pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path)(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::format(path)(e.to_string()))?;
    }
    w.flush().map_err(Error::io(path))
}

impl Report {
    /// Writes `records_<mode>.csv` and `summary_<mode>.json`; returns both paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        ensure_dir(dir)?;
        let mode = self.summary.mode.as_str();
        let csv_path = dir.join(format!("records_{mode}.csv"));
        let rows: Vec<(String, String)> =
            self.records.iter().map(|r| (join_tokens(&r.gold), join_tokens(&r.predicted))).collect();
        write_csv(
            &csv_path,
            self.records.iter().zip(&rows).map(|(r, (gold, pred))| RecordRow {
                query_id: r.query_id,
                gold,
                predicted: pred,
                exact_match: r.exact_match,
                token_f1: r.token_f1,
                broadcast_bytes: r.comm.broadcast,
                candidate_upload_bytes: r.comm.candidate_upload,
                adapter_request_bytes: r.comm.adapter_request,
                adapter_upload_bytes: r.comm.adapter_upload,
                total_bytes: r.comm.total(),
                adapters_transferred: r.comm.adapters_transferred,
                adapter_dedup_hits: r.comm.adapter_dedup_hits,
            }),
        )?;
        let json_path = dir.join(format!("summary_{mode}.json"));
        write_json(&json_path, &self.summary)?;
        Ok((csv_path, json_path))
    }
}

/// `documents.jsonl` and `queries.jsonl`, one object per line.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    ensure_dir(dir)?;
    let lines = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
    let docs = corpus.documents.iter().map(|d| serde_json::to_string(d).expect("document serializes")).collect();
    let queries = corpus.queries.iter().map(|q| serde_json::to_string(q).expect("query serializes")).collect();
    let p = dir.join("documents.jsonl");
    fs::write(&p, lines(docs)).map_err(Error::io(&p))?;
    let p = dir.join("queries.jsonl");
    fs::write(&p, lines(queries)).map_err(Error::io(&p))
}

pub fn silo_path(dir: &Path, silo_id: u32) -> PathBuf {
    dir.join(format!("silo_{silo_id}.json"))
}

pub fn write_silos(dir: &Path, silos: &[SiloState]) -> Result<()> {
    ensure_dir(dir)?;
    for s in silos {
        write_json(&silo_path(dir, s.silo_id), s)?;
    }
    Ok(())
}

/// Loads every `silo_<id>.json` in `dir`, ordered by id.
pub fn read_silos(dir: &Path) -> Result<Vec<SiloState>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        let name = entry.map_err(Error::io(dir))?.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name.strip_prefix("silo_").and_then(|s| s.strip_suffix(".json")).and_then(|s| s.parse::<u32>().ok()) {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(Error::Format { path: dir.into(), msg: "no silo snapshots found".into() });
    }
    ids.into_iter().map(|id| read_json(&silo_path(dir, id))).collect()
}
