use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Phrase, PhrasedCaption};
use crate::error::{Error, Result};

/// One line of a snapshot captions file: the model's caption for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotCaption {
    pub image_id: u64,
    pub phrases: Vec<Phrase>,
}

impl SnapshotCaption {
    pub fn new(image_id: u64, caption: &PhrasedCaption) -> Self {
        Self {
            image_id,
            phrases: caption.phrases.clone(),
        }
    }

    pub fn caption(&self) -> PhrasedCaption {
        PhrasedCaption::new(self.phrases.clone())
    }
}

fn check(items: &[SnapshotCaption]) -> Result<()> {
    let mut seen = HashSet::new();
    for (n, s) in items.iter().enumerate() {
        if !seen.insert(s.image_id) {
            return Err(Error::validation(
                format!("[{n}].image_id"),
                format!("duplicate image {}", s.image_id),
            ));
        }
        if s.phrases.is_empty() {
            return Err(Error::validation(format!("[{n}].phrases"), "empty caption"));
        }
        s.caption().validate().map_err(|e| match e {
            Error::Validation { path, message } => Error::validation(format!("[{n}].{path}"), message),
            other => other,
        })?;
    }
    Ok(())
}

pub fn save_snapshot(items: &[SnapshotCaption], path: &Path) -> Result<()> {
    check(items)?;
    let mut out = Vec::new();
    for s in items {
        serde_json::to_writer(&mut out, s).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Rejects duplicate image ids and empty captions or phrases.
pub fn load_snapshot(path: &Path) -> Result<Vec<SnapshotCaption>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let items: Vec<SnapshotCaption> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("line {}: {e}", n + 1))))
        .collect::<Result<_>>()?;
    check(&items)?;
    Ok(items)
}
