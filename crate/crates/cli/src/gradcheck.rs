//! Finite-difference checks of the captioner and feedback-network losses at
//! reduced dimensions.

use feedcap::captioner::{Captioner, CaptionerConfig, DecodeLimits, EncodedCaption};
use feedcap::corpus::{gen_scene, realize_caption, FeatureGrid, SceneConfig};
use feedcap::fbn::{build_fbn_dataset, fbn_vocab, Fbn, FbnConfig};
use feedcap::feedback::{Teacher, TeacherConfig};
use feedcap::numerics::{dropout_mask, grad_check_report, GradCheckReport, Tape};
use feedcap::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pipeline::{grammar, vocabulary};

pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub worst: Option<(String, usize)>,
}

impl From<GradCheckReport> for LossCheck {
    fn from(r: GradCheckReport) -> Self {
        Self {
            max_rel_error: r.max_rel_error,
            coordinates: r.coordinates,
            worst: r.worst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub captioner: LossCheck,
    pub fbn: LossCheck,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Cross-entropy of a ground-truth caption with the full decoder, attention
/// penalty included.
pub fn captioner_check(seed: u64) -> Result<LossCheck> {
    let cfg = CaptionerConfig {
        phrase_hidden: 8,
        word_hidden: 8,
        word_embed: 4,
        label_embed: 3,
        att_hidden: 4,
        mlp_hidden: 6,
        phrase_code: 4,
        deep_out: 6,
        feature_dim: 6,
        lambda_att: 0.5,
        limits: DecodeLimits::default(),
    };
    let c = Captioner::new(&cfg, vocabulary(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let feats = FeatureGrid {
        n: 4,
        dim: 6,
        values: (0..24).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let scene = gen_scene(seed, &SceneConfig::default())?;
    let caption = realize_caption(&scene, &grammar(), seed)?;
    let gold = EncodedCaption::encode(&caption, &c.vocab);
    Ok(grad_check_report(&c.store, 1e-4, |tape| c.model.mle_loss(tape, &feats, &gold))?.into())
}

/// Summed group losses over scripted examples with fixed dropout masks.
pub fn fbn_check(seed: u64) -> Result<LossCheck> {
    let teacher = Teacher::new(grammar(), TeacherConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for i in 0..3 {
        let scene = gen_scene(seed.wrapping_add(i), &SceneConfig::default())?;
        let caption = teacher.corrupt_caption(&scene, &mut rng)?;
        records.push(teacher.teach(&scene, &caption, &mut rng)?);
    }
    let examples = build_fbn_dataset(&records)?;
    let cfg = FbnConfig {
        embed: 6,
        hidden: 5,
        phrase: 4,
        mlp_hidden: 7,
        dropout: 0.3,
    };
    let fbn = Fbn::new(&cfg, fbn_vocab(&examples), seed)?;
    let groups = fbn.group(&examples, false)?;
    let masks: Vec<Vec<f64>> = (0..64)
        .map(|_| dropout_mask(&mut rng, cfg.mlp_hidden, cfg.dropout))
        .collect();
    let report = grad_check_report(&fbn.store, 1e-5, |tape: &mut Tape| {
        let mut k = 0;
        let mut terms = Vec::with_capacity(groups.len());
        for g in &groups {
            let mut mask = |_: usize, dim: usize| {
                k += 1;
                Some(masks[k % masks.len()][..dim].to_vec())
            };
            terms.push(fbn.model.group_loss(tape, g, &mut mask)?);
        }
        Ok(tape.sum_scalars(&terms))
    })?;
    Ok(report.into())
}

pub fn run(seed: u64) -> Result<GradCheckSummary> {
    let captioner = captioner_check(seed)?;
    let fbn = fbn_check(seed)?;
    let max_rel_error = captioner.max_rel_error.max(fbn.max_rel_error);
    Ok(GradCheckSummary {
        captioner,
        fbn,
        max_rel_error,
        passed: max_rel_error < TOLERANCE,
    })
}
