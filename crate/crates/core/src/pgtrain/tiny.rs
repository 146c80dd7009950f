//! A captioner small enough that every caption it can emit is enumerable,
//! for checking the policy-gradient estimator against the exact gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::estimator::{mixed_step, Baseline, PgContext, StepInput};
use crate::captioner::{Captioner, CaptionerConfig, DecodeLimits, EncodedCaption, Policy};
use crate::corpus::{FeatureGrid, Phrase, PhraseLabel, PhrasedCaption, Vocabulary, EOP};
use crate::error::Result;
use crate::numerics::{adam_step, AdamConfig, AdamState, Grads, Tape};
use crate::rewards::{sentence_reward, Quality, Reference, RewardConfig};

pub struct TinyPolicy {
    pub captioner: Captioner,
    pub feats: FeatureGrid,
    pub gold: EncodedCaption,
    pub reference: Reference,
    pub reward: RewardConfig,
}

impl TinyPolicy {
    /// Two phrases of at most one word over a three-word vocabulary, with
    /// random weights from `seed`.
    pub fn new(seed: u64) -> Result<Self> {
        let vocab = Vocabulary::from_words(["cat", "dog", "sits"].map(String::from));
        let cfg = CaptionerConfig {
            phrase_hidden: 4,
            word_hidden: 4,
            word_embed: 3,
            label_embed: 2,
            att_hidden: 3,
            mlp_hidden: 4,
            phrase_code: 3,
            deep_out: 4,
            feature_dim: 3,
            lambda_att: 0.01,
            limits: DecodeLimits {
                max_phrases: 2,
                max_words: 1,
            },
        };
        let captioner = Captioner::new(&cfg, vocab, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let feats = FeatureGrid {
            n: 2,
            dim: 3,
            values: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let caption = PhrasedCaption::new(vec![
            Phrase::new(PhraseLabel::NP, &["cat"]),
            Phrase::new(PhraseLabel::VP, &["sits"]),
        ]);
        let gold = EncodedCaption::encode(&caption, &captioner.vocab);
        let reference = Reference::new(caption.tokens().into_iter().map(str::to_string).collect(), Quality::Gt);
        Ok(Self {
            captioner,
            feats,
            gold,
            reference,
            reward: RewardConfig::default(),
        })
    }

    /// A few Adam steps of cross-entropy on the reference caption.
    pub fn pretrain(&mut self, steps: usize, lr: f64) -> Result<()> {
        let mut adam = AdamState::new(
            &self.captioner.store,
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
        );
        for _ in 0..steps {
            let mut grads = Grads::zeros_like(&self.captioner.store);
            let mut tape = Tape::new(&self.captioner.store);
            let loss = self.captioner.model.mle_loss(&mut tape, &self.feats, &self.gold)?;
            tape.backward(loss, &mut grads)?;
            adam_step(&mut self.captioner.store, &grads, &mut adam)?;
        }
        Ok(())
    }

    /// Every caption the decoder can produce under its limits.
    pub fn enumerate(&self) -> Vec<EncodedCaption> {
        let limits = self.captioner.config().limits;
        let words: Vec<usize> = (0..self.captioner.vocab.len()).filter(|&w| w != EOP).collect();
        let mut phrase_words: Vec<Vec<usize>> = vec![vec![]];
        for len in 1..=limits.max_words {
            let mut next = Vec::new();
            for p in phrase_words.iter().filter(|p| p.len() == len - 1) {
                for &w in &words {
                    let mut q = p.clone();
                    q.push(w);
                    next.push(q);
                }
            }
            phrase_words.extend(next);
        }
        let phrases: Vec<(PhraseLabel, Vec<usize>)> = PhraseLabel::ALL
            .iter()
            .flat_map(|&l| phrase_words.iter().map(move |w| (l, w.clone())))
            .collect();
        let mut out = vec![EncodedCaption { phrases: vec![] }];
        let mut frontier = out.clone();
        for _ in 0..limits.max_phrases {
            let mut next = Vec::new();
            for c in &frontier {
                for p in &phrases {
                    let mut c = c.clone();
                    c.phrases.push(p.clone());
                    next.push(c);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    pub fn reward_of(&self, caption: &EncodedCaption) -> f64 {
        let text = caption.decode(&self.captioner.vocab);
        sentence_reward(&text.tokens(), &self.reference, &self.reward)
    }

    /// `(∇_θ −E[r], Σ p)` by summing over every caption.
    pub fn exact_gradient(&self) -> Result<(Vec<f64>, f64)> {
        let mut grads = Grads::zeros_like(&self.captioner.store);
        let mut total = 0.0;
        for c in self.enumerate() {
            let mut tape = Tape::new(&self.captioner.store);
            let trace = self
                .captioner
                .model
                .decode(&mut tape, &self.feats, &mut Policy::Teacher(&c))?;
            let lp = trace.log_prob(&mut tape);
            let p = tape.scalar(lp).exp();
            total += p;
            tape.backward_scaled(lp, -p * self.reward_of(&c), &mut grads)?;
        }
        Ok((grads.flatten(&self.captioner.store), total))
    }

    fn input(&self) -> StepInput<'_> {
        StepInput {
            feats: &self.feats,
            gold: &self.gold,
            reference: &self.reference,
            feedback: &[],
        }
    }

    fn ctx(&self, baseline: Baseline) -> PgContext<'_> {
        PgContext {
            reward: &self.reward,
            fbn: None,
            baseline,
            temperature: 1.0,
        }
    }

    /// Mean of `n` single-sample estimates, every phrase under the policy gradient.
    pub fn estimate(&self, n: usize, baseline: Baseline, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grads = Grads::zeros_like(&self.captioner.store);
        let ctx = self.ctx(baseline);
        let all = self.gold.len();
        for _ in 0..n {
            mixed_step(
                &self.captioner,
                &self.input(),
                all,
                &ctx,
                &mut rng,
                &mut grads,
                1.0 / n as f64,
            )?;
        }
        Ok(grads.flatten(&self.captioner.store))
    }

    /// Total variance (trace of the covariance) of the single-sample gradient
    /// estimate over `n` samples drawn from `seed`.
    pub fn estimator_variance(&self, n: usize, baseline: Baseline, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctx = self.ctx(baseline);
        let dim = self.captioner.store.num_values();
        let (mut s1, mut s2) = (vec![0.0; dim], vec![0.0; dim]);
        let all = self.gold.len();
        for _ in 0..n {
            let mut g = Grads::zeros_like(&self.captioner.store);
            mixed_step(&self.captioner, &self.input(), all, &ctx, &mut rng, &mut g, 1.0)?;
            for (k, v) in g.flatten(&self.captioner.store).into_iter().enumerate() {
                s1[k] += v;
                s2[k] += v * v;
            }
        }
        let n = n as f64;
        Ok(s1.iter().zip(&s2).map(|(a, b)| b / n - (a / n) * (a / n)).sum())
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm
}
