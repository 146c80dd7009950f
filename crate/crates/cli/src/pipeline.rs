//! The training pipeline as plain functions over in-memory data. Commands wrap
//! these with file input and output.

use feedcap::captioner::{exact_match_rate, pretrain, scene_batch, Captioner, PretrainOutput};
use feedcap::corpus::{gen_dataset, gen_scene, scene_features, Dataset, FeatureGrid, Grammar, Vocabulary};
use feedcap::fbn::{build_fbn_dataset, train_fbn, Fbn, FbnExample, FbnTrainConfig, FbnTrainReport};
use feedcap::feedback::{FeedbackRecord, SnapshotCaption, Teacher};
use feedcap::pgtrain::{build_rl_images, evaluate, train_rl, EvalSet, RlConfig, TrainLog};
use feedcap::rewards::MetricReport;
use feedcap::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Scene ids of scripted FBN scenes start here, clear of the dataset's.
const FBN_SCENE_BASE: u64 = 10_000;

pub fn grammar() -> Grammar {
    Grammar::default()
}

pub fn vocabulary() -> Vocabulary {
    Vocabulary::from_words(grammar().terminals())
}

/// Training and test splits.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let s = cfg.seeds();
    let d = &cfg.data;
    let g = grammar();
    let train = gen_dataset(d.train_scenes, s.train_data, d.captions_per_scene, &d.scene, &g)?;
    let test = gen_dataset(d.test_scenes, s.test_data, d.captions_per_scene, &d.scene, &g)?;
    Ok((train, test))
}

pub fn features(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<FeatureGrid>> {
    ds.records
        .iter()
        .map(|r| scene_features(&r.scene, &cfg.data.scene, cfg.seeds().features))
        .collect()
}

pub fn pretrain_captioner(cfg: &ExperimentConfig, train: &Dataset) -> Result<(Captioner, PretrainOutput)> {
    let s = cfg.seeds();
    let mut c = Captioner::new(&cfg.captioner, vocabulary(), s.init)?;
    let (feats, items) = scene_batch(train, &c, &cfg.data.scene, s.features)?;
    let pcfg = feedcap::captioner::PretrainConfig {
        seed: s.init,
        ..cfg.pretrain.clone()
    };
    let out = pretrain(&mut c, &feats, &items, &pcfg)?;
    Ok((c, out))
}

/// The training scenes used for snapshot captions, feedback and RL.
pub fn rl_subset(cfg: &ExperimentConfig, train: &Dataset) -> Result<Dataset> {
    if train.len() < cfg.rl.images {
        return Err(Error::Config(format!(
            "rl.images is {} but the training split has {} scenes",
            cfg.rl.images,
            train.len()
        )));
    }
    Ok(train.split_at(cfg.rl.images).0)
}

/// Greedy captions of `subset`. Images whose caption comes out empty are left
/// out, since there is nothing to rate.
pub fn snapshot(cfg: &ExperimentConfig, captioner: &Captioner, subset: &Dataset) -> Result<Vec<SnapshotCaption>> {
    let feats = features(cfg, subset)?;
    let mut out = Vec::with_capacity(feats.len());
    for (r, f) in subset.records.iter().zip(&feats) {
        let caption = captioner.greedy(f)?;
        if !caption.is_empty() {
            out.push(SnapshotCaption::new(r.id, &caption));
        }
    }
    Ok(out)
}

pub fn teacher(cfg: &ExperimentConfig) -> Teacher {
    Teacher::new(grammar(), cfg.teacher.clone())
}

/// Scripted annotation of snapshot captions whose image is in `subset`,
/// skipping images listed in `done`.
pub fn teach(
    cfg: &ExperimentConfig,
    subset: &Dataset,
    snapshot: &[SnapshotCaption],
    done: &[u64],
) -> Result<Vec<FeedbackRecord>> {
    let t = teacher(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds().teacher);
    let mut out = Vec::new();
    for s in snapshot {
        if done.contains(&s.image_id) {
            continue;
        }
        let rec = subset
            .records
            .iter()
            .find(|r| r.id == s.image_id)
            .ok_or_else(|| Error::Config(format!("snapshot image {} is not in the dataset", s.image_id)))?;
        let mut record = t.teach(&rec.scene, &s.caption(), &mut rng)?;
        record.image_id = rec.id;
        out.push(record);
    }
    Ok(out)
}

/// Scripted records on corrupted ground-truth captions of fresh scenes.
pub fn synthetic_records(cfg: &ExperimentConfig, n: usize) -> Result<Vec<FeedbackRecord>> {
    let t = teacher(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds().fbn_data);
    (0..n as u64)
        .map(|i| {
            let scene = gen_scene(FBN_SCENE_BASE + i, &cfg.data.scene)?;
            let caption = t.corrupt_caption(&scene, &mut rng)?;
            t.teach(&scene, &caption, &mut rng)
        })
        .collect()
}

pub fn fbn_train_config(cfg: &ExperimentConfig) -> FbnTrainConfig {
    FbnTrainConfig {
        seed: cfg.seed,
        ..cfg.fbn.train.clone()
    }
}

pub fn train_feedback_network(
    cfg: &ExperimentConfig,
    records: &[FeedbackRecord],
    train: &FbnTrainConfig,
) -> Result<(Fbn, FbnTrainReport, Vec<FbnExample>)> {
    let examples = build_fbn_dataset(records)?;
    if examples.is_empty() {
        return Err(Error::Contract("no feedback rounds to train on".into()));
    }
    let (fbn, report) = train_fbn(&examples, &cfg.fbn.model, train)?;
    Ok((fbn, report, examples))
}

pub fn rl_config(cfg: &ExperimentConfig) -> RlConfig {
    RlConfig {
        seed: cfg.seeds().rl,
        ..cfg.rl.train.clone()
    }
}

/// Fine-tunes a copy of `captioner` on `subset` in the configured mode.
pub fn reinforce(
    cfg: &ExperimentConfig,
    rl: &RlConfig,
    captioner: &Captioner,
    subset: &Dataset,
    records: Option<&[FeedbackRecord]>,
    fbn: Option<&Fbn>,
    eval: Option<&EvalSet>,
) -> Result<(Captioner, TrainLog)> {
    let mode = cfg.rl.mode;
    let images = build_rl_images(subset, records, mode)?;
    let feats = features(cfg, subset)?;
    let mut c = captioner.clone();
    let log = train_rl(&mut c, &feats, &images, mode, fbn, rl, eval)?;
    Ok((c, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricReport,
    /// Fraction of greedy captions that are a valid realization of their scene.
    pub exact_match: f64,
    pub scenes: usize,
}

pub fn eval_set(cfg: &ExperimentConfig, ds: &Dataset) -> Result<EvalSet> {
    EvalSet::from_dataset(ds, &cfg.data.scene, cfg.seeds().features)
}

pub fn evaluate_captioner(cfg: &ExperimentConfig, captioner: &Captioner, ds: &Dataset) -> Result<EvalReport> {
    let metrics = evaluate(captioner, &eval_set(cfg, ds)?, &cfg.rl.train.reward)?;
    let exact_match = exact_match_rate(captioner, ds, &cfg.data.scene, cfg.seeds().features, &grammar())?;
    Ok(EvalReport {
        metrics,
        exact_match,
        scenes: ds.len(),
    })
}
