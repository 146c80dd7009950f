use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Phrase, PhrasedCaption};
use crate::error::{Error, Result};
use crate::feedback::{ErrorType, FeedbackRecord, MistakeCategory};
use crate::rewards::FeedbackClass;

/// Size of the mistake-type one-hot: six categories plus "none".
pub const NUM_MISTAKE_TYPES: usize = 7;

pub fn mistake_index(m: Option<MistakeCategory>) -> usize {
    m.map_or(NUM_MISTAKE_TYPES - 1, MistakeCategory::index)
}

mod mistake_type {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<MistakeCategory>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match m {
            Some(c) => c.serialize(s),
            None => s.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<MistakeCategory>, D::Error> {
        let s = String::deserialize(d)?;
        if s == "none" {
            return Ok(None);
        }
        serde_json::from_value(serde_json::Value::String(s))
            .map(Some)
            .map_err(serde::de::Error::custom)
    }
}

/// One phrase of one caption judged against one feedback sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FbnExample {
    pub caption: Vec<Phrase>,
    pub feedback: String,
    pub phrase_index: usize,
    #[serde(with = "mistake_type")]
    pub mistake_type: Option<MistakeCategory>,
    pub label: FeedbackClass,
}

fn push_caption(
    out: &mut Vec<FbnExample>,
    caption: &PhrasedCaption,
    feedback: &str,
    m: MistakeCategory,
    marked: Option<(usize, FeedbackClass)>,
) {
    for i in 0..caption.len() {
        let label = match marked {
            Some((k, l)) if k == i => l,
            _ => FeedbackClass::NotRelevant,
        };
        out.push(FbnExample {
            caption: caption.phrases.clone(),
            feedback: feedback.to_string(),
            phrase_index: i,
            mistake_type: Some(m),
            label,
        });
    }
}

/// Per round: the marked phrase of the caption before the round is wrong, the
/// phrase at the same index after correction is correct, and every other
/// phrase of either caption is not relevant. An inserted phrase has no wrong
/// counterpart and a deleted phrase has no correct one.
pub fn build_fbn_dataset(records: &[FeedbackRecord]) -> Result<Vec<FbnExample>> {
    let mut out = Vec::new();
    for (n, rec) in records.iter().enumerate() {
        rec.validate().map_err(|e| match e {
            Error::Validation { path, message } => {
                Error::validation(format!("records[{n}] (image {}).{path}", rec.image_id), message)
            }
            other => other,
        })?;
        let chain = rec.caption_chain()?;
        for (k, round) in rec.rounds.iter().enumerate() {
            let (before, after) = (&chain[k], &chain[k + 1]);
            let idx = round.span.phrase_index;
            let inserted = round.correction_label.is_some();
            let deleted = round.error_type == ErrorType::Remove
                && round.span.word_start == 0
                && round.span.word_end == before.phrases[idx].words.len();
            let text = &round.feedback_text;
            let m = round.mistake_category;
            push_caption(
                &mut out,
                before,
                text,
                m,
                (!inserted).then_some((idx, FeedbackClass::Wrong)),
            );
            push_caption(
                &mut out,
                after,
                text,
                m,
                (!deleted).then_some((idx, FeedbackClass::Correct)),
            );
        }
    }
    Ok(out)
}

pub fn save_fbn_dataset(examples: &[FbnExample], path: &std::path::Path) -> Result<()> {
    let mut text = String::new();
    for e in examples {
        text.push_str(&serde_json::to_string(e).map_err(|e| Error::Format(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_fbn_dataset(path: &std::path::Path) -> Result<Vec<FbnExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("line {}: {e}", n + 1))))
        .collect()
}
