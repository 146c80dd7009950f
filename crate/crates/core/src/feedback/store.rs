use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::{FeedbackRecord, Provenance, Rating};
use crate::error::{Error, Result};

/// Append-only JSONL file of [`FeedbackRecord`]s.
#[derive(Debug, Clone)]
pub struct FeedbackStore {
    path: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreFilter {
    pub image_id: Option<u64>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub records: usize,
    pub images: usize,
    /// Records with at least one detailed round.
    pub with_rounds: usize,
    /// Mean number of rounds over records that have any.
    pub avg_rounds: f64,
    pub quality: BTreeMap<String, usize>,
}

impl FeedbackStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &FeedbackRecord) -> Result<()> {
        self.append_all(std::slice::from_ref(record))
    }

    /// Validates every record before writing any of them.
    pub fn append_all(&self, records: &[FeedbackRecord]) -> Result<()> {
        for r in records {
            r.validate()?;
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for r in records {
            let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(&self.path, e))?;
        }
        w.flush().map_err(|e| Error::io(&self.path, e))
    }

    /// All records matching `filter`; a missing file holds no records.
    pub fn load(&self, filter: StoreFilter) -> Result<Vec<FeedbackRecord>> {
        let file = match std::fs::File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        let mut out = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&self.path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: FeedbackRecord =
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
            if filter.image_id.is_some_and(|id| id != r.image_id) {
                continue;
            }
            if filter.provenance.is_some_and(|p| p != r.provenance) {
                continue;
            }
            out.push(r);
        }
        Ok(out)
    }
}

pub fn store_stats(records: &[FeedbackRecord]) -> StoreStats {
    let mut quality: BTreeMap<String, usize> = Rating::ALL.iter().map(|q| (q.to_string(), 0)).collect();
    let mut images: Vec<u64> = records.iter().map(|r| r.image_id).collect();
    images.sort_unstable();
    images.dedup();
    let mut with_rounds = 0;
    let mut rounds = 0;
    for r in records {
        *quality.entry(r.quality.to_string()).or_default() += 1;
        if !r.rounds.is_empty() {
            with_rounds += 1;
            rounds += r.rounds.len();
        }
    }
    StoreStats {
        records: records.len(),
        images: images.len(),
        with_rounds,
        avg_rounds: if with_rounds == 0 {
            0.0
        } else {
            rounds as f64 / with_rounds as f64
        },
        quality,
    }
}
