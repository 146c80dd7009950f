use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhraseLabel {
    NP,
    PP,
    VP,
    CP,
}

impl PhraseLabel {
    pub const ALL: [PhraseLabel; 4] = [PhraseLabel::NP, PhraseLabel::PP, PhraseLabel::VP, PhraseLabel::CP];

    /// Class index in the decoder's label head; EOS is [`EOS_CLASS`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Label-head class that ends the sentence.
pub const EOS_CLASS: usize = 4;
pub const NUM_LABEL_CLASSES: usize = 5;

impl fmt::Display for PhraseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Phrase {
    pub label: PhraseLabel,
    pub words: Vec<String>,
}

impl Phrase {
    pub fn new(label: PhraseLabel, words: &[&str]) -> Self {
        Self {
            label,
            words: words.iter().map(|w| w.to_string()).collect(),
        }
    }
}

/// A caption segmented into labeled phrases.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PhrasedCaption {
    pub phrases: Vec<Phrase>,
}

impl PhrasedCaption {
    pub fn new(phrases: Vec<Phrase>) -> Self {
        Self { phrases }
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// All words, flattened in order.
    pub fn tokens(&self) -> Vec<&str> {
        self.phrases
            .iter()
            .flat_map(|p| p.words.iter().map(String::as_str))
            .collect()
    }

    pub fn word_count(&self) -> usize {
        self.phrases.iter().map(|p| p.words.len()).sum()
    }

    /// Bracketed rendering, e.g. `( a cat ) ( sitting ) ( on a sidewalk )`.
    pub fn render(&self) -> String {
        self.phrases
            .iter()
            .map(|p| format!("( {} )", p.words.join(" ")))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.phrases.iter().enumerate() {
            if p.words.is_empty() {
                return Err(Error::validation(format!("phrases[{i}].words"), "empty phrase"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for PhrasedCaption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Merges every NP into its predecessor when the predecessor (in the input
/// sequence) is not itself an NP. One left-to-right pass; the absorbing
/// phrase keeps its label.
pub fn chunk_merge(raw: &[Phrase]) -> Result<PhrasedCaption> {
    if raw.is_empty() {
        return Err(Error::Contract("chunk_merge of an empty phrase list".into()));
    }
    let mut out: Vec<Phrase> = Vec::with_capacity(raw.len());
    for (i, p) in raw.iter().enumerate() {
        let merge = i > 0 && p.label == PhraseLabel::NP && raw[i - 1].label != PhraseLabel::NP;
        match out.last_mut() {
            Some(last) if merge => last.words.extend(p.words.iter().cloned()),
            _ => out.push(p.clone()),
        }
    }
    Ok(PhrasedCaption::new(out))
}

/// Lowercases and splits punctuation into separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for ch in text.chars() {
        if matches!(ch, ',' | '.' | '!' | '?' | ';' | ':' | '(' | ')' | '"') {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.extend(ch.to_lowercase());
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use PhraseLabel::*;

    fn words(c: &PhrasedCaption) -> Vec<(PhraseLabel, String)> {
        c.phrases.iter().map(|p| (p.label, p.words.join(" "))).collect()
    }

    #[test]
    fn merges_np_after_verb() {
        let raw = [
            Phrase::new(NP, &["a", "man"]),
            Phrase::new(VP, &["riding"]),
            Phrase::new(NP, &["a", "motorcycle"]),
        ];
        let c = chunk_merge(&raw).unwrap();
        assert_eq!(
            words(&c),
            vec![(NP, "a man".into()), (VP, "riding a motorcycle".into())]
        );
    }

    #[test]
    fn np_after_np_unchanged() {
        let raw = [Phrase::new(NP, &["a", "man"]), Phrase::new(NP, &["a", "woman"])];
        assert_eq!(chunk_merge(&raw).unwrap().phrases, raw.to_vec());
    }

    #[test]
    fn single_pass_uses_input_predecessor() {
        let raw = [
            Phrase::new(PP, &["on"]),
            Phrase::new(NP, &["a", "mat"]),
            Phrase::new(NP, &["a", "rug"]),
        ];
        let c = chunk_merge(&raw).unwrap();
        assert_eq!(words(&c), vec![(PP, "on a mat".into()), (NP, "a rug".into())]);
    }

    #[test]
    fn empty_input_is_contract_error() {
        assert!(matches!(chunk_merge(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn render_uses_brackets() {
        let c = PhrasedCaption::new(vec![
            Phrase::new(NP, &["a", "cat"]),
            Phrase::new(VP, &["sitting"]),
            Phrase::new(PP, &["on", "a", "sidewalk"]),
        ]);
        assert_eq!(c.render(), "( a cat ) ( sitting ) ( on a sidewalk )");
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize("There is a dog on a sidewalk, not a cat."),
            ["there", "is", "a", "dog", "on", "a", "sidewalk", ",", "not", "a", "cat", "."]
        );
    }

    fn label() -> impl proptest::strategy::Strategy<Value = PhraseLabel> {
        proptest::sample::select(PhraseLabel::ALL.to_vec())
    }

    proptest::proptest! {
        // Idempotent whenever no NP run follows a non-NP phrase; every grammar
        // output is in this domain.
        #[test]
        fn merge_idempotent_without_np_runs(labels in proptest::collection::vec(label(), 1..10)) {
            let raw: Vec<Phrase> = labels
                .iter()
                .enumerate()
                .map(|(i, l)| Phrase { label: *l, words: vec![format!("w{i}")] })
                .collect();
            let has_run = labels.windows(3).any(|w| w[0] != NP && w[1] == NP && w[2] == NP);
            proptest::prop_assume!(!has_run);
            let once = chunk_merge(&raw).unwrap();
            let twice = chunk_merge(&once.phrases).unwrap();
            proptest::prop_assert_eq!(once, twice);
        }

        #[test]
        fn merge_preserves_words(labels in proptest::collection::vec(label(), 1..10)) {
            let raw: Vec<Phrase> = labels
                .iter()
                .enumerate()
                .map(|(i, l)| Phrase { label: *l, words: vec![format!("w{i}")] })
                .collect();
            let merged = chunk_merge(&raw).unwrap();
            let flat: Vec<String> = raw.iter().flat_map(|p| p.words.clone()).collect();
            proptest::prop_assert_eq!(merged.tokens(), flat.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
}
