use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::captioner::{Captioner, EncodedCaption, Policy};
use crate::corpus::FeatureGrid;
use crate::error::{Error, Result};
use crate::fbn::{Fbn, FeedbackCode};
use crate::numerics::{Grads, Tape};
use crate::rewards::{phrase_reward, sentence_reward, Reference, RewardConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    /// Phrase rewards of the greedy decode from the same prefix.
    Greedy,
    /// The same value for every phrase; `Constant(0.0)` is plain REINFORCE.
    Constant(f64),
}

/// Reward machinery shared by every step of a run.
#[derive(Clone, Copy)]
pub struct PgContext<'a> {
    pub reward: &'a RewardConfig,
    pub fbn: Option<&'a Fbn>,
    pub baseline: Baseline,
    pub temperature: f64,
}

/// One image: features, the reference used for both cross-entropy and the
/// reward, and the image's feedback sentences encoded by the context's FBN.
pub struct StepInput<'a> {
    pub feats: &'a FeatureGrid,
    pub gold: &'a EncodedCaption,
    pub reference: &'a Reference,
    pub feedback: &'a [FeedbackCode],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub xe_phrases: usize,
    pub pg_phrases: usize,
    /// Sentence reward of the sample, `None` for a pure cross-entropy step.
    pub sample_reward: Option<f64>,
    pub baseline_reward: Option<f64>,
    pub loss: f64,
}

/// Sentence reward and one phrase reward per decoded phrase (empty phrases
/// included, with no feedback term).
pub fn phrase_rewards(
    captioner: &Captioner,
    caption: &EncodedCaption,
    reference: &Reference,
    feedback: &[FeedbackCode],
    ctx: &PgContext,
) -> Result<(f64, Vec<f64>)> {
    let text = caption.decode(&captioner.vocab);
    let tokens = text.tokens();
    let r = sentence_reward(&tokens, reference, ctx.reward);
    if !r.is_finite() {
        return Err(Error::Numeric(format!("non-finite reward {r} for {:?}", text.render())));
    }
    let scores = match ctx.fbn {
        Some(f) if !feedback.is_empty() && !text.is_empty() => f.phrase_scores_coded(&text, feedback, ctx.reward)?,
        _ => vec![0.0; text.len()],
    };
    let mut k = 0;
    let mut out = Vec::with_capacity(caption.len());
    for (_, words) in &caption.phrases {
        let s = if words.is_empty() {
            0.0
        } else {
            k += 1;
            scores[k - 1]
        };
        out.push(phrase_reward(r, s, ctx.reward));
    }
    Ok((r, out))
}

/// Accumulates `scale ×` the gradient of one mixed step into `grads`: the
/// first `P − pg` gold phrases are teacher-forced under cross-entropy and the
/// rest of the caption is sampled and trained with the per-phrase advantage
/// `r(w^p) − b^p`. Sampled phrases beyond the baseline's length, and the EOS
/// decision, use the baseline's sentence reward.
pub fn mixed_step(
    captioner: &Captioner,
    input: &StepInput,
    pg: usize,
    ctx: &PgContext,
    rng: &mut ChaCha8Rng,
    grads: &mut Grads,
    scale: f64,
) -> Result<StepStats> {
    let p = input.gold.len();
    let pg = pg.min(p);
    let keep = p - pg;
    let model = &captioner.model;
    let mut tape = Tape::new(&captioner.store);
    if pg == 0 {
        let loss = model.mle_loss(&mut tape, input.feats, input.gold)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("cross-entropy loss is {v}")));
        }
        tape.backward_scaled(loss, scale, grads)?;
        return Ok(StepStats {
            xe_phrases: p,
            pg_phrases: 0,
            sample_reward: None,
            baseline_reward: None,
            loss: v,
        });
    }

    let trace = model.decode(
        &mut tape,
        input.feats,
        &mut Policy::Prefix {
            gold: input.gold,
            keep,
            rng,
            temperature: ctx.temperature,
        },
    )?;
    let sampled = trace.encoded();
    let (r_s, r_p) = phrase_rewards(captioner, &sampled, input.reference, input.feedback, ctx)?;

    let (b_s, b_p) = match ctx.baseline {
        Baseline::Constant(c) => (c, vec![c; r_p.len()]),
        Baseline::Greedy => {
            let mut gtape = Tape::new(&captioner.store);
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            let g = model.decode(
                &mut gtape,
                input.feats,
                &mut Policy::Prefix {
                    gold: input.gold,
                    keep,
                    rng: &mut unused,
                    temperature: 0.0,
                },
            )?;
            let (b_s, b_p) = phrase_rewards(captioner, &g.encoded(), input.reference, input.feedback, ctx)?;
            let aligned = (0..r_p.len()).map(|t| b_p.get(t).copied().unwrap_or(b_s)).collect();
            (b_s, aligned)
        }
    };

    let mut terms = Vec::with_capacity(trace.phrases.len() + 2);
    for (t, step) in trace.phrases.iter().enumerate() {
        let coef = if t < keep { 1.0 } else { r_p[t] - b_p[t] };
        terms.push(tape.scale(step.logp, -coef));
    }
    if let Some(e) = trace.eos {
        let coef = if e.from_gold { 1.0 } else { r_s - b_s };
        terms.push(tape.scale(e.logp, -coef));
    }
    if keep > 0 {
        terms.push(model.attention_penalty(&mut tape, &trace.phrases[..keep], input.feats.n));
    }
    let loss = tape.sum_scalars(&terms);
    let v = tape.scalar(loss);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("policy-gradient surrogate is {v}")));
    }
    tape.backward_scaled(loss, scale, grads)?;
    Ok(StepStats {
        xe_phrases: keep,
        pg_phrases: pg,
        sample_reward: Some(r_s),
        baseline_reward: Some(b_s),
        loss: v,
    })
}
