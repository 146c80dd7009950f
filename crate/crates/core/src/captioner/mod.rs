//! Hierarchical phrase-based caption decoder: model, decoding, MLE pretraining
//! and checkpoints.

mod model;
mod train;

pub use model::{CaptionerConfig, CaptionerModel, DecodeLimits, EncodedCaption, EosStep, PhraseStep, Policy, Trace};
pub use train::{exact_match_rate, pretrain, scene_batch, EpochLog, PretrainConfig, PretrainOutput, TrainItem};

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureGrid, PhrasedCaption, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{Checkpoint, ParamStore, Tape};

/// A decoder together with its parameter values and vocabulary.
#[derive(Debug, Clone)]
pub struct Captioner {
    pub model: CaptionerModel,
    pub store: ParamStore,
    pub vocab: Vocabulary,
}

/// A sampled caption with the log-probability of every decision taken.
#[derive(Debug, Clone)]
pub struct Sampled {
    pub caption: PhrasedCaption,
    pub encoded: EncodedCaption,
    pub step_logps: Vec<f64>,
    pub log_prob: f64,
}

pub const CAPTIONER_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionerCheckpoint {
    pub version: u32,
    pub config: CaptionerConfig,
    pub vocab: Vocabulary,
    pub params: Checkpoint,
    /// Hash of the dataset the weights were trained on, if known.
    pub dataset_hash: Option<String>,
}

impl Captioner {
    pub fn new(config: &CaptionerConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = CaptionerModel::new(config, vocab.len(), &mut store, seed)?;
        Ok(Self { model, store, vocab })
    }

    pub fn config(&self) -> &CaptionerConfig {
        &self.model.config
    }

    pub fn greedy(&self, feats: &FeatureGrid) -> Result<PhrasedCaption> {
        let mut tape = Tape::new(&self.store);
        let trace = self.model.decode(&mut tape, feats, &mut Policy::Greedy)?;
        Ok(trace.caption(&self.vocab))
    }

    pub fn greedy_encoded(&self, feats: &FeatureGrid) -> Result<EncodedCaption> {
        let mut tape = Tape::new(&self.store);
        Ok(self.model.decode(&mut tape, feats, &mut Policy::Greedy)?.encoded())
    }

    pub fn sample(&self, feats: &FeatureGrid, rng: &mut ChaCha8Rng, temperature: f64) -> Result<Sampled> {
        let mut tape = Tape::new(&self.store);
        let trace = self
            .model
            .decode(&mut tape, feats, &mut Policy::Sample { rng, temperature })?;
        let lp = trace.log_prob(&mut tape);
        Ok(Sampled {
            caption: trace.caption(&self.vocab),
            encoded: trace.encoded(),
            step_logps: trace.step_logps(&tape),
            log_prob: tape.scalar(lp),
        })
    }

    /// Log-probability of an encoded caption under teacher forcing, with
    /// decisions forced by the decode limits excluded.
    pub fn log_prob(&self, feats: &FeatureGrid, caption: &EncodedCaption) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let trace = self.model.decode(&mut tape, feats, &mut Policy::Teacher(caption))?;
        let lp = trace.log_prob(&mut tape);
        Ok(tape.scalar(lp))
    }

    pub fn mle_loss_value(&self, feats: &FeatureGrid, caption: &PhrasedCaption) -> Result<f64> {
        let gold = EncodedCaption::encode(caption, &self.vocab);
        let mut tape = Tape::new(&self.store);
        let loss = self.model.mle_loss(&mut tape, feats, &gold)?;
        Ok(tape.scalar(loss))
    }

    pub fn to_checkpoint(&self, dataset_hash: Option<String>) -> CaptionerCheckpoint {
        CaptionerCheckpoint {
            version: CAPTIONER_CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            vocab: self.vocab.clone(),
            params: self.store.to_checkpoint(),
            dataset_hash,
        }
    }

    pub fn from_checkpoint(ck: &CaptionerCheckpoint) -> Result<Self> {
        if ck.version != CAPTIONER_CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported captioner checkpoint version {}",
                ck.version
            )));
        }
        let mut c = Self::new(&ck.config, ck.vocab.clone(), 0)?;
        let loaded = ParamStore::from_checkpoint(&ck.params)?;
        c.store.load_values_from(&loaded)?;
        Ok(c)
    }

    pub fn save(&self, path: &Path, dataset_hash: Option<String>) -> Result<()> {
        let text =
            serde_json::to_string(&self.to_checkpoint(dataset_hash)).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: CaptionerCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        Ok((Self::from_checkpoint(&ck)?, ck.dataset_hash))
    }
}
