use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{RlImage, RlMode};
use super::estimator::{mixed_step, Baseline, PgContext, StepInput, StepStats};
use super::schedule::AnnealSchedule;
use crate::captioner::{Captioner, EncodedCaption};
use crate::corpus::{scene_features, Dataset, FeatureGrid, PhrasedCaption, SceneConfig};
use crate::error::{Error, Result};
use crate::fbn::Fbn;
use crate::numerics::{adam_step, AdamConfig, AdamState, Grads, GRAD_CLIP_NORM};
use crate::rewards::{metric_report, MetricReport, Reference, RewardConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub lr: f64,
    pub batch: usize,
    pub schedule: AnnealSchedule,
    pub seed: u64,
    pub temperature: f64,
    pub reward: RewardConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            lr: 1e-6,
            batch: 50,
            schedule: AnnealSchedule::default(),
            seed: 0,
            temperature: 1.0,
            reward: RewardConfig::default(),
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.reward.validate()?;
        if self.batch == 0 || !(self.lr > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Config("batch, lr and temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlBatchLog {
    pub batch: usize,
    pub mean_reward: Option<f64>,
    pub baseline_reward: Option<f64>,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Variance over the batch of `r(w^s) − r(ŵ)`.
    pub advantage_variance: Option<f64>,
    /// Variance over the batch of `r(w^s)`, the advantage without a baseline.
    pub reward_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlEpochLog {
    pub epoch: usize,
    /// `floor((epoch − K) / m)`, absent during the pure cross-entropy epochs.
    pub pg_budget: Option<usize>,
    pub xe_phrases: usize,
    pub pg_phrases: usize,
    pub mean_loss: f64,
    pub mean_reward: Option<f64>,
    pub baseline_reward: Option<f64>,
    pub grad_norm: f64,
    pub advantage_variance: Option<f64>,
    pub reward_variance: Option<f64>,
    pub batches: Vec<RlBatchLog>,
    pub eval: Option<MetricReport>,
}

/// Append-only per-epoch record of an RL run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<RlEpochLog>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).map_err(|e| Error::Format(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let epochs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("line {}: {e}", n + 1))))
            .collect::<Result<_>>()?;
        Ok(Self { epochs })
    }
}

/// Held-out scenes with their ground-truth reference pools.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub feats: Vec<FeatureGrid>,
    pub refs: Vec<Vec<Vec<String>>>,
}

impl EvalSet {
    pub fn from_dataset(ds: &Dataset, scene_cfg: &SceneConfig, feature_seed: u64) -> Result<Self> {
        let mut feats = Vec::with_capacity(ds.len());
        let mut refs = Vec::with_capacity(ds.len());
        for r in &ds.records {
            feats.push(scene_features(&r.scene, scene_cfg, feature_seed)?);
            refs.push(
                r.captions
                    .iter()
                    .map(|c| c.caption().tokens().into_iter().map(str::to_string).collect())
                    .collect(),
            );
        }
        Ok(Self { feats, refs })
    }
}

pub fn greedy_captions(captioner: &Captioner, feats: &[FeatureGrid]) -> Result<Vec<PhrasedCaption>> {
    feats.iter().map(|f| captioner.greedy(f)).collect()
}

/// Greedy decoding scored against the ground-truth pools.
pub fn evaluate(captioner: &Captioner, set: &EvalSet, cfg: &RewardConfig) -> Result<MetricReport> {
    let caps = greedy_captions(captioner, &set.feats)?;
    let items: Vec<(Vec<&str>, Vec<Vec<String>>)> = caps
        .iter()
        .zip(&set.refs)
        .map(|(c, r)| (c.tokens(), r.clone()))
        .collect();
    metric_report(&items, cfg)
}

fn variance(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Some(xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    mean(&v)
}

/// Mixed cross-entropy / policy-gradient training with the greedy baseline.
/// `feats` is indexed by `RlImage::scene`. The feedback network is only
/// consulted when the mode includes feedback.
pub fn train_rl(
    captioner: &mut Captioner,
    feats: &[FeatureGrid],
    images: &[RlImage],
    mode: RlMode,
    fbn: Option<&Fbn>,
    cfg: &RlConfig,
    eval: Option<&EvalSet>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if mode.feedback && fbn.is_none() {
        return Err(Error::Config(format!("RL mode {mode} needs a feedback network")));
    }
    if images.is_empty() {
        return Err(Error::Contract("RL training on zero images".into()));
    }
    let fbn = if mode.feedback { fbn } else { None };
    let mut pools: Vec<Vec<(EncodedCaption, Reference)>> = Vec::with_capacity(images.len());
    let mut codes = Vec::with_capacity(images.len());
    for img in images {
        if img.scene >= feats.len() {
            return Err(Error::Contract(format!(
                "image refers to scene {} of {}",
                img.scene,
                feats.len()
            )));
        }
        let pool: Vec<_> = img
            .refs
            .iter()
            .filter(|r| !r.caption.is_empty())
            .map(|r| {
                let tokens = r.caption.tokens().into_iter().map(str::to_string).collect();
                (
                    EncodedCaption::encode(&r.caption, &captioner.vocab),
                    Reference::new(tokens, r.quality),
                )
            })
            .collect();
        if pool.is_empty() {
            return Err(Error::Contract(format!(
                "scene {} has no non-empty reference",
                img.scene
            )));
        }
        pools.push(pool);
        codes.push(match fbn {
            Some(f) => img
                .feedback
                .iter()
                .map(|(text, m)| f.encode_feedback(text, *m))
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        });
    }

    let ctx = PgContext {
        reward: &cfg.reward,
        fbn,
        baseline: Baseline::Greedy,
        temperature: cfg.temperature,
    };
    let mut adam = AdamState::new(
        &captioner.store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.schedule.total_epochs() {
        let budget = cfg.schedule.pg_phrases(epoch);
        order.shuffle(&mut rng);
        let (mut xe, mut pg, mut loss_sum) = (0usize, 0usize, 0.0);
        let mut batches = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut grads = Grads::zeros_like(&captioner.store);
            let scale = 1.0 / chunk.len() as f64;
            let mut stats: Vec<StepStats> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let pool = &pools[i];
                let (gold, reference) = &pool[rng.random_range(0..pool.len())];
                let input = StepInput {
                    feats: &feats[images[i].scene],
                    gold,
                    reference,
                    feedback: &codes[i],
                };
                let s = mixed_step(
                    captioner,
                    &input,
                    budget.unwrap_or(0),
                    &ctx,
                    &mut rng,
                    &mut grads,
                    scale,
                )?;
                xe += s.xe_phrases;
                pg += s.pg_phrases;
                loss_sum += s.loss;
                stats.push(s);
            }
            let grad_norm = grads.clip_global_norm(GRAD_CLIP_NORM);
            adam_step(&mut captioner.store, &grads, &mut adam)?;
            let rewards: Vec<f64> = stats.iter().filter_map(|s| s.sample_reward).collect();
            let base: Vec<f64> = stats.iter().filter_map(|s| s.baseline_reward).collect();
            let adv: Vec<f64> = rewards.iter().zip(&base).map(|(r, b)| r - b).collect();
            batches.push(RlBatchLog {
                batch: b,
                mean_reward: mean(&rewards),
                baseline_reward: mean(&base),
                grad_norm,
                advantage_variance: variance(&adv),
                reward_variance: variance(&rewards),
            });
        }
        let eval_report = eval.map(|e| evaluate(captioner, e, &cfg.reward)).transpose()?;
        log.epochs.push(RlEpochLog {
            epoch,
            pg_budget: budget,
            xe_phrases: xe,
            pg_phrases: pg,
            mean_loss: loss_sum / images.len() as f64,
            mean_reward: mean_opt(batches.iter().map(|b| b.mean_reward)),
            baseline_reward: mean_opt(batches.iter().map(|b| b.baseline_reward)),
            grad_norm: batches.iter().map(|b| b.grad_norm).sum::<f64>() / batches.len() as f64,
            advantage_variance: mean_opt(batches.iter().map(|b| b.advantage_variance)),
            reward_variance: mean_opt(batches.iter().map(|b| b.reward_variance)),
            batches,
            eval: eval_report,
        });
    }
    Ok(log)
}
