use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::caption::{chunk_merge, Phrase, PhrasedCaption};
use super::grammar::{realize_caption, Grammar};
use super::scene::{gen_scene, Scene, SceneConfig};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub phrases: Vec<Phrase>,
    pub seed: u64,
}

impl CaptionRecord {
    pub fn caption(&self) -> PhrasedCaption {
        PhrasedCaption::new(self.phrases.clone())
    }
}

/// One line of `dataset.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub version: u32,
    pub id: u64,
    pub scene: Scene,
    pub captions: Vec<CaptionRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub records: Vec<SceneRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn captions(&self) -> impl Iterator<Item = PhrasedCaption> + '_ {
        self.records
            .iter()
            .flat_map(|r| r.captions.iter().map(CaptionRecord::caption))
    }

    /// Splits off the first `n` records.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.records.len());
        (
            Dataset {
                records: self.records[..n].to_vec(),
            },
            Dataset {
                records: self.records[n..].to_vec(),
            },
        )
    }
}

/// Generates `n` scenes with `captions_per_scene` realized captions each.
pub fn gen_dataset(
    n: usize,
    seed: u64,
    captions_per_scene: usize,
    cfg: &SceneConfig,
    grammar: &Grammar,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let scene = gen_scene(rng.random(), cfg)?;
        let captions = (0..captions_per_scene)
            .map(|_| {
                let s: u64 = rng.random();
                realize_caption(&scene, grammar, s).map(|c| CaptionRecord {
                    phrases: c.phrases,
                    seed: s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(SceneRecord {
            version: DATASET_VERSION,
            id: scene.id,
            scene,
            captions,
        });
    }
    Ok(Dataset { records })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in &ds.records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends records to an existing (or new) dataset file.
pub fn append_records(records: &[SceneRecord], path: &Path) -> Result<()> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a dataset. With `strict` set, every caption word must be in the vocabulary.
pub fn load_dataset(path: &Path, strict: Option<&Vocabulary>) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(DATASET_VERSION as u64) {
            return Err(Error::Format(format!(
                "line {}: unsupported schema version {version:?}",
                lineno + 1
            )));
        }
        let rec: SceneRecord =
            serde_json::from_value(value).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if let Some(vocab) = strict {
            for c in &rec.captions {
                for p in &c.phrases {
                    if let Some(w) = p.words.iter().find(|w| vocab.id(w).is_none()) {
                        return Err(Error::Format(format!("line {}: unknown word `{w}`", lineno + 1)));
                    }
                }
            }
        }
        records.push(rec);
    }
    Ok(Dataset { records })
}

#[derive(Deserialize)]
struct ImportLine {
    id: u64,
    captions: Vec<CaptionRecord>,
}

/// Reads externally chunked captions (`{id, captions: [{phrases, seed}]}` per
/// line) and applies the NP-merge rule to each.
pub fn import_prechunked(path: &Path) -> Result<Vec<(u64, Vec<PhrasedCaption>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImportLine =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        let caps = rec
            .captions
            .iter()
            .map(|c| {
                let merged = chunk_merge(&c.phrases)?;
                merged.validate()?;
                Ok(merged)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((rec.id, caps));
    }
    Ok(out)
}
