use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::caption::PhrasedCaption;
use crate::error::{Error, Result};

pub type WordId = usize;

pub const EOP: WordId = 0;
pub const BOS: WordId = 1;
pub const UNK: WordId = 2;
pub const RESERVED: [&str; 3] = ["<EOP>", "<BOS>", "<UNK>"];

/// Word ↔ id bijection. Ids 0..3 are always `<EOP>`, `<BOS>`, `<UNK>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, WordId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    words: Vec<String>,
}

const VOCAB_VERSION: u32 = 1;

impl Vocabulary {
    /// Reserved tokens followed by `words` in sorted, de-duplicated order.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut sorted: Vec<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !RESERVED.contains(&w.as_str()))
            .collect();
        sorted.sort();
        sorted.dedup();
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(sorted);
        Self::from_ordered(all).expect("reserved prefix present")
    }

    fn from_ordered(words: Vec<String>) -> Result<Self> {
        if words.len() < 3 || words[..3].iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::Format("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> WordId {
        self.id(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, words: &[String]) -> Vec<WordId> {
        words.iter().map(|w| self.id_or_unk(w)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = VocabFile {
            version: VOCAB_VERSION,
            words: self.words.clone(),
        };
        let text = serde_json::to_string_pretty(&f).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: VocabFile = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if f.version != VOCAB_VERSION {
            return Err(Error::Format(format!("unsupported vocabulary version {}", f.version)));
        }
        Self::from_ordered(f.words)
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.words.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let words = Vec::<String>::deserialize(d)?;
        Self::from_ordered(words).map_err(serde::de::Error::custom)
    }
}

pub fn build_vocab<'a, I>(captions: I) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a PhrasedCaption>,
{
    let mut words = Vec::new();
    let mut any = false;
    for c in captions {
        any = true;
        words.extend(c.tokens().into_iter().map(str::to_string));
    }
    if !any {
        return Err(Error::Contract("cannot build a vocabulary from no captions".into()));
    }
    Ok(Vocabulary::from_words(words))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_stable() {
        let v = Vocabulary::from_words(["zebra", "apple", "apple"]);
        assert_eq!(v.id("<EOP>"), Some(EOP));
        assert_eq!(v.id("<BOS>"), Some(BOS));
        assert_eq!(v.id("<UNK>"), Some(UNK));
        assert_eq!(v.len(), 5);
        assert_eq!(v.id_or_unk("nope"), UNK);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
