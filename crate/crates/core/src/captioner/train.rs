//! Cross-entropy pretraining and exact-match evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::EncodedCaption;
use super::Captioner;
use crate::corpus::{scene_features, Dataset, FeatureGrid, Grammar, SceneConfig};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, Grads, Tape, GRAD_CLIP_NORM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 16,
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-caption loss over the epoch.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub log: Vec<EpochLog>,
}

/// A training pair: index into the feature table plus an encoded gold caption.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub scene: usize,
    pub gold: EncodedCaption,
}

/// Features for every scene and one item per (scene, caption) pair.
pub fn scene_batch(
    ds: &Dataset,
    captioner: &Captioner,
    scene_cfg: &SceneConfig,
    feature_seed: u64,
) -> Result<(Vec<FeatureGrid>, Vec<TrainItem>)> {
    let mut feats = Vec::with_capacity(ds.len());
    let mut items = Vec::new();
    for (i, r) in ds.records.iter().enumerate() {
        feats.push(scene_features(&r.scene, scene_cfg, feature_seed)?);
        for c in &r.captions {
            items.push(TrainItem {
                scene: i,
                gold: EncodedCaption::encode(&c.caption(), &captioner.vocab),
            });
        }
    }
    Ok((feats, items))
}

/// Adam on the summed teacher-forced loss, averaged per mini-batch.
pub fn pretrain(
    captioner: &mut Captioner,
    feats: &[FeatureGrid],
    items: &[TrainItem],
    cfg: &PretrainConfig,
) -> Result<PretrainOutput> {
    if items.is_empty() {
        return Err(Error::Contract("pretraining on an empty dataset".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut adam = AdamState::new(
        &captioner.store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut grads = Grads::zeros_like(&captioner.store);
            let scale = 1.0 / chunk.len() as f64;
            for &k in chunk {
                let item = &items[k];
                let mut tape = Tape::new(&captioner.store);
                let loss = captioner.model.mle_loss(&mut tape, &feats[item.scene], &item.gold)?;
                let v = tape.scalar(loss);
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss diverged at epoch {epoch}, batch {b}: {v}"
                    )));
                }
                total += v;
                tape.backward_scaled(loss, scale, &mut grads)?;
            }
            grads.clip_global_norm(GRAD_CLIP_NORM);
            adam_step(&mut captioner.store, &grads, &mut adam)?;
        }
        log.push(EpochLog {
            epoch,
            loss: total / items.len() as f64,
        });
    }
    Ok(PretrainOutput { log })
}

/// Fraction of scenes whose greedy caption is one of the grammar's
/// realizations of that scene.
pub fn exact_match_rate(
    captioner: &Captioner,
    ds: &Dataset,
    scene_cfg: &SceneConfig,
    feature_seed: u64,
    grammar: &Grammar,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Contract("exact match over an empty dataset".into()));
    }
    let mut hits = 0usize;
    for r in &ds.records {
        let feats = scene_features(&r.scene, scene_cfg, feature_seed)?;
        let got = captioner.greedy(&feats)?;
        if grammar.variants(&r.scene)?.contains(&got) {
            hits += 1;
        }
    }
    Ok(hits as f64 / ds.len() as f64)
}
