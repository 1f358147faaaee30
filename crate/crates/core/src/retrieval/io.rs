//! Manifests (JSON lines) and ranking / CMC tables (CSV).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RetrievalRanking, ScoredEntry};
use crate::error::{Result, SfrError};

/// One manifest line: `{"entryId": .., "subjectId": .., "path": ..}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManifestEntry {
    pub entry_id: String,
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SfrError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SfrError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| SfrError::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| SfrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        let line = serde_json::to_string(e).map_err(|e| SfrError::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| SfrError::io(path, e))?;
    }
    w.flush().map_err(|e| SfrError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> SfrError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => SfrError::io(path, io),
            other => SfrError::Format(format!("{}: {other:?}", path.display())),
        }
    } else {
        SfrError::Format(format!("{}: {e}", path.display()))
    }
}

/// `probeId,rank,entryId,d,r,s`, one row per (probe, gallery entry).
pub fn write_rankings(rankings: &[RetrievalRanking], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["probeId", "rank", "entryId", "d", "r", "s"])
        .map_err(|e| csv_err(path, e))?;
    for r in rankings {
        for (i, s) in r.scored.iter().enumerate() {
            w.write_record([
                r.probe_id.clone(),
                (i + 1).to_string(),
                s.entry_id.clone(),
                s.global_distance.to_string(),
                s.sfr_distance.to_string(),
                s.fused.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| SfrError::io(path, e))
}

#[derive(Debug, Deserialize)]
struct RankingRow {
    #[serde(rename = "probeId")]
    probe_id: String,
    rank: usize,
    #[serde(rename = "entryId")]
    entry_id: String,
    d: f64,
    r: f64,
    s: f64,
}

/// Groups rows by probe (first-appearance order) and orders each by rank.
pub fn read_rankings(path: impl AsRef<Path>) -> Result<Vec<RetrievalRanking>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<RankingRow>> = HashMap::new();
    for row in reader.deserialize() {
        let row: RankingRow = row.map_err(|e| csv_err(path, e))?;
        if !rows.contains_key(&row.probe_id) {
            order.push(row.probe_id.clone());
        }
        rows.entry(row.probe_id.clone()).or_default().push(row);
    }
    order
        .into_iter()
        .map(|probe_id| {
            let mut group = rows.remove(&probe_id).unwrap_or_default();
            group.sort_by_key(|r| r.rank);
            if group.iter().enumerate().any(|(i, r)| r.rank != i + 1) {
                return Err(SfrError::Format(format!(
                    "ranks for probe {probe_id:?} are not 1..{}",
                    group.len()
                )));
            }
            Ok(RetrievalRanking {
                probe_id,
                scored: group
                    .into_iter()
                    .map(|r| ScoredEntry {
                        entry_id: r.entry_id,
                        global_distance: r.d,
                        sfr_distance: r.r,
                        fused: r.s,
                    })
                    .collect(),
            })
        })
        .collect()
}

/// `rank,cmc` table.
pub fn write_cmc_csv(cmc: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["rank", "cmc"]).map_err(|e| csv_err(path, e))?;
    for (i, v) in cmc.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SfrError::io(path, e))
}
