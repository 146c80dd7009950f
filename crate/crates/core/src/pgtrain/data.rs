use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Dataset, PhrasedCaption};
use crate::error::{Error, Result};
use crate::feedback::{FeedbackRecord, MistakeCategory, Rating};
use crate::rewards::Quality;

/// Captions added to the ground-truth references of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Extra {
    None,
    /// Annotator-corrected captions without minor or major errors.
    Corrected,
    /// Every caption without minor or major errors, snapshot captions included.
    All,
}

/// Ground-truth captions per image when a mode says `gt` without a count.
pub const DEFAULT_GT: usize = 5;

/// Reference pool and reward composition for one RL run, written like
/// `5gt`, `4gt+fb`, `3gt+c+fb`, `c`, `a+fb`. Case is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RlMode {
    pub gt: usize,
    pub extra: Extra,
    pub feedback: bool,
}

impl RlMode {
    pub fn needs_records(&self) -> bool {
        self.feedback || self.extra != Extra::None
    }
}

impl fmt::Display for RlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.gt > 0 {
            parts.push(format!("{}gt", self.gt));
        }
        match self.extra {
            Extra::None => {}
            Extra::Corrected => parts.push("c".into()),
            Extra::All => parts.push("a".into()),
        }
        if self.feedback {
            parts.push("fb".into());
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for RlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognized RL mode {s:?}"));
        let mut mode = RlMode {
            gt: 0,
            extra: Extra::None,
            feedback: false,
        };
        for part in s.trim().to_ascii_lowercase().split('+') {
            match part {
                "c" if mode.extra == Extra::None => mode.extra = Extra::Corrected,
                "a" if mode.extra == Extra::None => mode.extra = Extra::All,
                "fb" if !mode.feedback => mode.feedback = true,
                "gt" if mode.gt == 0 => mode.gt = DEFAULT_GT,
                p if p.ends_with("gt") && mode.gt == 0 => {
                    mode.gt = p[..p.len() - 2].parse().map_err(|_| bad())?;
                    if mode.gt == 0 {
                        return Err(bad());
                    }
                }
                _ => return Err(bad()),
            }
        }
        if mode.gt == 0 && mode.extra == Extra::None {
            return Err(Error::Config(format!("RL mode {s:?} has no reference captions")));
        }
        Ok(mode)
    }
}

impl Serialize for RlMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RlMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A feedback sentence with its annotated mistake category.
pub type FeedbackSentence = (String, Option<MistakeCategory>);

#[derive(Debug, Clone, PartialEq)]
pub struct PoolRef {
    pub caption: PhrasedCaption,
    pub quality: Quality,
}

/// One training image for RL: index into the dataset, reference pool and
/// feedback sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct RlImage {
    pub scene: usize,
    pub refs: Vec<PoolRef>,
    pub feedback: Vec<FeedbackSentence>,
}

fn usable(r: Rating) -> Option<Quality> {
    match r {
        Rating::Perfect => Some(Quality::Perfect),
        Rating::Acceptable => Some(Quality::Acceptable),
        Rating::GrammarOnly => Some(Quality::GrammarOnly),
        Rating::Minor | Rating::Major => None,
    }
}

fn extra_refs(rec: &FeedbackRecord, extra: Extra) -> Result<Vec<PoolRef>> {
    let mut out = Vec::new();
    if extra == Extra::All {
        if let Some(q) = usable(rec.quality) {
            out.push(PoolRef {
                caption: rec.caption.clone(),
                quality: q,
            });
        }
    }
    if extra != Extra::None && !rec.rounds.is_empty() {
        if let Some(q) = usable(rec.final_quality()) {
            let chain = rec.caption_chain()?;
            out.push(PoolRef {
                caption: chain.last().expect("chain is never empty").clone(),
                quality: q,
            });
        }
    }
    Ok(out)
}

/// Resolves `mode` against the dataset and the feedback records, keyed by
/// scene id. Images without a usable extra caption fall back to one ground
/// truth caption when the mode has no ground truth of its own.
pub fn build_rl_images(ds: &Dataset, records: Option<&[FeedbackRecord]>, mode: RlMode) -> Result<Vec<RlImage>> {
    if mode.needs_records() && records.is_none() {
        return Err(Error::Config(format!("RL mode {mode} needs a feedback store")));
    }
    let mut by_image: HashMap<u64, &FeedbackRecord> = HashMap::new();
    for r in records.unwrap_or(&[]) {
        if by_image.insert(r.image_id, r).is_some() {
            return Err(Error::Config(format!(
                "several feedback records for image {}",
                r.image_id
            )));
        }
    }
    let mut out = Vec::with_capacity(ds.len());
    for (i, rec) in ds.records.iter().enumerate() {
        if rec.captions.len() < mode.gt.max(1) {
            return Err(Error::Config(format!(
                "scene {} has {} captions, mode {mode} needs {}",
                rec.id,
                rec.captions.len(),
                mode.gt.max(1)
            )));
        }
        let gt = |n: usize| {
            rec.captions[..n]
                .iter()
                .map(|c| PoolRef {
                    caption: c.caption(),
                    quality: Quality::Gt,
                })
                .collect::<Vec<_>>()
        };
        let fb = by_image.get(&rec.id);
        let mut refs = gt(mode.gt);
        if let Some(r) = fb {
            refs.extend(extra_refs(r, mode.extra)?);
        }
        if refs.is_empty() {
            refs = gt(1);
        }
        let feedback = match (mode.feedback, fb) {
            (true, Some(r)) => r
                .rounds
                .iter()
                .map(|e| (e.feedback_text.clone(), Some(e.mistake_category)))
                .collect(),
            _ => vec![],
        };
        out.push(RlImage {
            scene: i,
            refs,
            feedback,
        });
    }
    Ok(out)
}
