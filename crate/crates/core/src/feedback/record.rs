use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Phrase, PhraseLabel, PhrasedCaption};
use crate::error::{Error, Result};

/// Round-1 caption quality, ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rating {
    Perfect,
    Acceptable,
    GrammarOnly,
    Minor,
    Major,
}

impl Rating {
    pub const ALL: [Rating; 5] = [
        Rating::Perfect,
        Rating::Acceptable,
        Rating::GrammarOnly,
        Rating::Minor,
        Rating::Major,
    ];

    /// Perfect and acceptable captions receive no detailed feedback.
    pub fn needs_feedback(self) -> bool {
        self > Rating::Acceptable
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rating::Perfect => "perfect",
            Rating::Acceptable => "acceptable",
            Rating::GrammarOnly => "grammar-only",
            Rating::Minor => "minor",
            Rating::Major => "major",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorType {
    Replace,
    Missing,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MistakeCategory {
    Object,
    Action,
    Attribute,
    Preposition,
    Counting,
    Grammar,
}

impl MistakeCategory {
    pub const ALL: [MistakeCategory; 6] = [
        MistakeCategory::Object,
        MistakeCategory::Action,
        MistakeCategory::Attribute,
        MistakeCategory::Preposition,
        MistakeCategory::Counting,
        MistakeCategory::Grammar,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Words `[word_start, word_end)` of phrase `phrase_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub phrase_index: usize,
    pub word_start: usize,
    pub word_end: usize,
}

/// One round of detailed feedback on the current caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundEntry {
    pub error_type: ErrorType,
    pub feedback_text: String,
    pub mistake_category: MistakeCategory,
    pub span: Span,
    pub correction: Vec<String>,
    /// Set when a whole phrase is missing: the correction becomes a new phrase
    /// with this label inserted at `span.phrase_index`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction_label: Option<PhraseLabel>,
    pub post_quality: Rating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Human,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRecord {
    pub image_id: u64,
    /// The caption shown in the first round.
    pub caption: PhrasedCaption,
    pub quality: Rating,
    #[serde(default)]
    pub rounds: Vec<RoundEntry>,
    pub provenance: Provenance,
}

fn check_span(caption: &PhrasedCaption, e: &RoundEntry, path: &str) -> Result<()> {
    let s = e.span;
    let field = |f: &str| format!("{path}.span.{f}");
    if s.word_start > s.word_end {
        return Err(Error::validation(field("word_start"), "word_start exceeds word_end"));
    }
    if e.correction_label.is_some() {
        if e.error_type != ErrorType::Missing {
            return Err(Error::validation(
                format!("{path}.correction_label"),
                "only a missing phrase carries a correction label",
            ));
        }
        if s.phrase_index > caption.len() {
            return Err(Error::validation(
                field("phrase_index"),
                "insertion point past the caption end",
            ));
        }
        if s.word_start != 0 || s.word_end != 0 {
            return Err(Error::validation(
                field("word_start"),
                "a missing phrase has an empty span",
            ));
        }
        return Ok(());
    }
    let phrase = caption
        .phrases
        .get(s.phrase_index)
        .ok_or_else(|| Error::validation(field("phrase_index"), format!("caption has {} phrases", caption.len())))?;
    if s.word_end > phrase.words.len() {
        return Err(Error::validation(
            field("word_end"),
            format!("span crosses the end of a {}-word phrase", phrase.words.len()),
        ));
    }
    match e.error_type {
        ErrorType::Replace | ErrorType::Remove if s.word_start == s.word_end => Err(Error::validation(
            field("word_end"),
            "replace and remove need at least one marked word",
        )),
        ErrorType::Missing if s.word_start != s.word_end => Err(Error::validation(
            field("word_end"),
            "missing words are marked by an empty span",
        )),
        _ => Ok(()),
    }
}

/// Checks one round against the caption it refers to.
pub fn validate_round(caption: &PhrasedCaption, e: &RoundEntry, path: &str) -> Result<()> {
    if e.feedback_text.trim().is_empty() {
        return Err(Error::validation(format!("{path}.feedback_text"), "empty feedback"));
    }
    check_span(caption, e, path)?;
    let needs_words = matches!(e.error_type, ErrorType::Replace | ErrorType::Missing);
    if needs_words && e.correction.is_empty() {
        return Err(Error::validation(
            format!("{path}.correction"),
            "correction words required",
        ));
    }
    if e.error_type == ErrorType::Remove && !e.correction.is_empty() {
        return Err(Error::validation(
            format!("{path}.correction"),
            "remove takes no correction",
        ));
    }
    if e.correction
        .iter()
        .any(|w| w.trim().is_empty() || w.contains(char::is_whitespace))
    {
        return Err(Error::validation(
            format!("{path}.correction"),
            "correction must be single tokens",
        ));
    }
    Ok(())
}

/// The caption after applying one round's correction.
pub fn apply_correction(caption: &PhrasedCaption, e: &RoundEntry) -> Result<PhrasedCaption> {
    check_span(caption, e, "round")?;
    let mut phrases = caption.phrases.clone();
    let s = e.span;
    if let Some(label) = e.correction_label {
        phrases.insert(
            s.phrase_index,
            Phrase {
                label,
                words: e.correction.clone(),
            },
        );
        return Ok(PhrasedCaption::new(phrases));
    }
    let words = &mut phrases[s.phrase_index].words;
    words.splice(s.word_start..s.word_end, e.correction.iter().cloned());
    if words.is_empty() {
        phrases.remove(s.phrase_index);
    }
    Ok(PhrasedCaption::new(phrases))
}

impl FeedbackRecord {
    pub fn validate(&self) -> Result<()> {
        if self.caption.is_empty() {
            return Err(Error::validation("caption", "empty caption"));
        }
        self.caption.validate().map_err(|e| match e {
            Error::Validation { path, message } => Error::validation(format!("caption.{path}"), message),
            other => other,
        })?;
        if self.quality.needs_feedback() == self.rounds.is_empty() {
            return Err(Error::validation(
                "rounds",
                format!(
                    "quality {} {} detailed rounds",
                    self.quality,
                    if self.rounds.is_empty() { "requires" } else { "forbids" }
                ),
            ));
        }
        let mut current = self.caption.clone();
        for (i, r) in self.rounds.iter().enumerate() {
            let path = format!("rounds[{i}]");
            validate_round(&current, r, &path)?;
            current = apply_correction(&current, r)?;
        }
        Ok(())
    }

    /// Caption shown before each round, followed by the final corrected caption.
    pub fn caption_chain(&self) -> Result<Vec<PhrasedCaption>> {
        let mut out = vec![self.caption.clone()];
        for r in &self.rounds {
            let next = apply_correction(out.last().unwrap(), r)?;
            out.push(next);
        }
        Ok(out)
    }

    pub fn final_quality(&self) -> Rating {
        self.rounds.last().map_or(self.quality, |r| r.post_quality)
    }
}
