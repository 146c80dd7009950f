//! Two-level phrase/word decoder with label-conditioned attention.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    FeatureGrid, Phrase, PhraseLabel, PhrasedCaption, Vocabulary, WordId, BOS, EOP, EOS_CLASS, NUM_LABEL_CLASSES,
};
use crate::error::{Error, Result};
use crate::numerics::{
    argmax, softmax_unchecked, Activation, Embedding, Linear, LstmCell, LstmState, Mlp, MlpSpec, ParamId, ParamStore,
    Tape, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeLimits {
    pub max_phrases: usize,
    pub max_words: usize,
}

impl Default for DecodeLimits {
    fn default() -> Self {
        Self {
            max_phrases: 8,
            max_words: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptionerConfig {
    pub phrase_hidden: usize,
    pub word_hidden: usize,
    pub word_embed: usize,
    pub label_embed: usize,
    pub att_hidden: usize,
    pub mlp_hidden: usize,
    pub phrase_code: usize,
    pub deep_out: usize,
    pub feature_dim: usize,
    pub lambda_att: f64,
    pub limits: DecodeLimits,
}

impl Default for CaptionerConfig {
    fn default() -> Self {
        Self {
            phrase_hidden: 64,
            word_hidden: 64,
            word_embed: 32,
            label_embed: 8,
            att_hidden: 32,
            mlp_hidden: 64,
            phrase_code: 32,
            deep_out: 64,
            feature_dim: 32,
            lambda_att: 0.01,
            limits: DecodeLimits::default(),
        }
    }
}

impl CaptionerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("phrase_hidden", self.phrase_hidden),
            ("word_hidden", self.word_hidden),
            ("word_embed", self.word_embed),
            ("label_embed", self.label_embed),
            ("att_hidden", self.att_hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("phrase_code", self.phrase_code),
            ("deep_out", self.deep_out),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Config(format!("captioner dimension `{name}` is zero")));
        }
        if self.limits.max_phrases == 0 || self.limits.max_words == 0 {
            return Err(Error::Config("decode limits must be at least 1".into()));
        }
        if !(self.lambda_att >= 0.0) {
            return Err(Error::Config("lambda_att must be non-negative".into()));
        }
        Ok(())
    }
}

/// Scores `v · relu(W_q [h; l] + b + W_a a_j)` per location.
#[derive(Debug, Clone)]
struct Attention {
    query: Linear,
    key: ParamId,
    v: ParamId,
}

impl Attention {
    fn new(
        store: &mut ParamStore,
        name: &str,
        query_dim: usize,
        cfg: &CaptionerConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let query = Linear::new(store, &format!("{name}.q"), query_dim, cfg.att_hidden, rng)?;
        let key = store.register_uniform(
            &format!("{name}.k"),
            &[cfg.att_hidden, cfg.feature_dim],
            cfg.feature_dim,
            rng,
        )?;
        let v = store.register_uniform(&format!("{name}.v"), &[cfg.att_hidden], cfg.att_hidden, rng)?;
        Ok(Self { query, key, v })
    }
}

/// Parameter handles of the decoder; values live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct CaptionerModel {
    pub config: CaptionerConfig,
    pub vocab_size: usize,
    h0: ParamId,
    c0: ParamId,
    phrase_lstm: LstmCell,
    label_head: Mlp,
    label_emb: Embedding,
    att_phrase: Attention,
    att_word: Attention,
    topic: Mlp,
    word_emb: Embedding,
    word_lstm: LstmCell,
    deep: Linear,
    out: Linear,
    phrase_enc: Mlp,
}

/// Gold caption as label classes and word ids (no `<EOP>`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCaption {
    pub phrases: Vec<(PhraseLabel, Vec<WordId>)>,
}

impl EncodedCaption {
    pub fn encode(caption: &PhrasedCaption, vocab: &Vocabulary) -> Self {
        Self {
            phrases: caption
                .phrases
                .iter()
                .map(|p| (p.label, vocab.encode(&p.words)))
                .collect(),
        }
    }

    pub fn decode(&self, vocab: &Vocabulary) -> PhrasedCaption {
        PhrasedCaption::new(
            self.phrases
                .iter()
                .filter(|(_, w)| !w.is_empty())
                .map(|(l, w)| Phrase {
                    label: *l,
                    words: w.iter().map(|&i| vocab.word(i).to_string()).collect(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// How each label and word decision is made during a decode.
pub enum Policy<'a> {
    /// Follow the gold caption, including its final EOS.
    Teacher(&'a EncodedCaption),
    Greedy,
    /// Sample at `temperature`; 0 means argmax.
    Sample {
        rng: &'a mut ChaCha8Rng,
        temperature: f64,
    },
    /// Follow the first `keep` gold phrases, then sample at `temperature`. When
    /// `keep` covers the whole gold caption the EOS decision is also taken from gold.
    Prefix {
        gold: &'a EncodedCaption,
        keep: usize,
        rng: &'a mut ChaCha8Rng,
        temperature: f64,
    },
}

#[derive(Debug, Clone)]
pub struct PhraseStep {
    pub label: PhraseLabel,
    pub words: Vec<WordId>,
    /// Log-probability of the label and all word decisions of this phrase.
    pub logp: Var,
    pub label_logp: f64,
    /// One entry per non-forced word decision, `<EOP>` included.
    pub word_logps: Vec<f64>,
    pub from_gold: bool,
    pub alpha_phrase: Var,
    pub alpha_word: Var,
    pub label_logits: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct EosStep {
    pub logp: Var,
    pub from_gold: bool,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub phrases: Vec<PhraseStep>,
    /// `None` when EOS was forced by the phrase limit.
    pub eos: Option<EosStep>,
}

impl Trace {
    pub fn encoded(&self) -> EncodedCaption {
        EncodedCaption {
            phrases: self.phrases.iter().map(|p| (p.label, p.words.clone())).collect(),
        }
    }

    pub fn caption(&self, vocab: &Vocabulary) -> PhrasedCaption {
        self.encoded().decode(vocab)
    }

    /// Total log-probability as a tape value.
    pub fn log_prob(&self, tape: &mut Tape) -> Var {
        let mut parts: Vec<Var> = self.phrases.iter().map(|p| p.logp).collect();
        if let Some(e) = self.eos {
            parts.push(e.logp);
        }
        if parts.is_empty() {
            return tape.zeros(1);
        }
        tape.sum_scalars(&parts)
    }

    /// Every recorded decision log-probability in decode order.
    pub fn step_logps(&self, tape: &Tape) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.phrases {
            out.push(p.label_logp);
            out.extend(&p.word_logps);
        }
        if let Some(e) = self.eos {
            out.push(tape.scalar(e.logp));
        }
        out
    }
}

struct Context {
    keys_phrase: Vec<Var>,
    keys_word: Vec<Var>,
}

fn sample_index(rng: &mut ChaCha8Rng, logp: &[f64], temperature: f64) -> usize {
    if temperature <= 0.0 {
        return argmax(logp);
    }
    let scaled: Vec<f64> = logp.iter().map(|l| l / temperature).collect();
    let p = softmax_unchecked(&scaled);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

enum Choice {
    Gold(usize),
    Free(usize),
}

impl CaptionerModel {
    pub fn new(config: &CaptionerConfig, vocab_size: usize, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size <= 3 {
            return Err(Error::Config("vocabulary holds only reserved tokens".into()));
        }
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let h0 = store.register_uniform("phrase.h0", &[c.phrase_hidden], c.phrase_hidden, rng)?;
        let c0 = store.register_uniform("phrase.c0", &[c.phrase_hidden], c.phrase_hidden, rng)?;
        let phrase_lstm = LstmCell::new(
            store,
            "phrase.lstm",
            c.label_embed + c.feature_dim + c.phrase_code,
            c.phrase_hidden,
            rng,
        )?;
        let label_head = Mlp::new(
            store,
            "label",
            &MlpSpec::uniform(
                c.phrase_hidden,
                c.mlp_hidden,
                NUM_LABEL_CLASSES,
                3,
                Activation::Relu,
                Activation::Identity,
            ),
            rng,
        )?;
        let label_emb = Embedding::new(store, "label.emb", NUM_LABEL_CLASSES, c.label_embed, rng)?;
        let q = c.phrase_hidden + c.label_embed;
        let att_phrase = Attention::new(store, "att.phrase", q, c, rng)?;
        let att_word = Attention::new(store, "att.word", q, c, rng)?;
        let topic = Mlp::new(
            store,
            "topic",
            &MlpSpec::uniform(
                q + c.feature_dim,
                c.mlp_hidden,
                c.word_hidden,
                3,
                Activation::Relu,
                Activation::Tanh,
            ),
            rng,
        )?;
        let word_emb = Embedding::new(store, "word.emb", vocab_size, c.word_embed, rng)?;
        let word_lstm = LstmCell::new(store, "word.lstm", c.feature_dim + c.word_embed, c.word_hidden, rng)?;
        let deep = Linear::new(
            store,
            "out.deep",
            c.word_hidden + c.feature_dim + c.word_embed,
            c.deep_out,
            rng,
        )?;
        let out = Linear::new(store, "out.logits", c.deep_out, vocab_size, rng)?;
        let phrase_enc = Mlp::new(
            store,
            "phrase.enc",
            &MlpSpec::uniform(
                c.word_embed,
                c.mlp_hidden,
                c.phrase_code,
                3,
                Activation::Relu,
                Activation::Relu,
            ),
            rng,
        )?;
        Ok(Self {
            config: config.clone(),
            vocab_size,
            h0,
            c0,
            phrase_lstm,
            label_head,
            label_emb,
            att_phrase,
            att_word,
            topic,
            word_emb,
            word_lstm,
            deep,
            out,
            phrase_enc,
        })
    }

    /// Final layers of the label and word heads.
    pub fn output_heads(&self) -> [Linear; 2] {
        [self.label_head.last_layer(), self.out]
    }

    fn prepare(&self, tape: &mut Tape, feats: &FeatureGrid) -> Result<Context> {
        if feats.n == 0 {
            return Err(Error::Contract("feature grid has no locations".into()));
        }
        if feats.dim != self.config.feature_dim {
            return Err(Error::shape(
                "features",
                &[feats.n, self.config.feature_dim],
                &[feats.n, feats.dim],
            ));
        }
        let mut keys_phrase = Vec::with_capacity(feats.n);
        let mut keys_word = Vec::with_capacity(feats.n);
        for j in 0..feats.n {
            let a = tape.constant(feats.location(j).to_vec());
            keys_phrase.push(tape.linear(self.att_phrase.key, None, a)?);
            keys_word.push(tape.linear(self.att_word.key, None, a)?);
        }
        Ok(Context { keys_phrase, keys_word })
    }

    fn attend(
        &self,
        tape: &mut Tape,
        att: &Attention,
        keys: &[Var],
        query: Var,
        feats: &FeatureGrid,
    ) -> Result<(Var, Var)> {
        let q = att.query.apply(tape, query)?;
        let v = tape.param(att.v);
        let scores: Vec<Var> = keys
            .iter()
            .map(|&k| {
                let s = tape.add(q, k);
                let s = tape.relu(s);
                tape.dot(v, s)
            })
            .collect();
        let scores = tape.concat(&scores);
        let alpha = tape.softmax(scores);
        let ctx = tape.mix_rows(alpha, &feats.values, feats.dim);
        Ok((alpha, ctx))
    }

    /// Runs the decoder once under `policy`, recording everything on `tape`.
    pub fn decode(&self, tape: &mut Tape, feats: &FeatureGrid, policy: &mut Policy) -> Result<Trace> {
        let cfg = &self.config;
        let limits = cfg.limits;
        let ctx = self.prepare(tape, feats)?;
        let mut state = LstmState {
            h: tape.param(self.h0),
            c: tape.param(self.c0),
        };
        let mut prev_l = tape.zeros(cfg.label_embed);
        let mut prev_c = tape.zeros(cfg.feature_dim);
        let mut prev_e = tape.zeros(cfg.phrase_code);
        let mut phrases = Vec::new();
        let mut eos = None;

        for t in 0.. {
            if t >= limits.max_phrases {
                if let Policy::Teacher(g) | Policy::Prefix { gold: g, .. } = policy {
                    if g.len() > limits.max_phrases {
                        return Err(Error::Contract(format!(
                            "gold caption has {} phrases, limit is {}",
                            g.len(),
                            limits.max_phrases
                        )));
                    }
                }
                break;
            }
            let input = tape.concat(&[prev_l, prev_c, prev_e]);
            state = self.phrase_lstm.step(tape, state, input)?;
            let logits = self.label_head.apply(tape, state.h)?;
            let lp = tape.log_softmax(logits);
            let choice = match policy {
                Policy::Teacher(g) => Choice::Gold(g.phrases.get(t).map_or(EOS_CLASS, |p| p.0.index())),
                Policy::Prefix { gold, keep, .. } if t < *keep || (t == *keep && *keep >= gold.len()) => {
                    Choice::Gold(gold.phrases.get(t).map_or(EOS_CLASS, |p| p.0.index()))
                }
                Policy::Prefix { rng, temperature, .. } => {
                    Choice::Free(sample_index(rng, tape.value(lp), *temperature))
                }
                Policy::Greedy => Choice::Free(argmax(tape.value(lp))),
                Policy::Sample { rng, temperature } => Choice::Free(sample_index(rng, tape.value(lp), *temperature)),
            };
            let (label_idx, from_gold) = match choice {
                Choice::Gold(i) => (i, true),
                Choice::Free(i) => (i, false),
            };
            let label_lp = tape.pick(lp, label_idx);
            if label_idx == EOS_CLASS {
                eos = Some(EosStep {
                    logp: label_lp,
                    from_gold,
                });
                break;
            }
            let label = PhraseLabel::from_index(label_idx).expect("non-EOS label");
            let l_emb = self.label_emb.lookup(tape, label_idx)?;
            let query = tape.concat(&[state.h, l_emb]);
            let (alpha_phrase, c_phrase) = self.attend(tape, &self.att_phrase, &ctx.keys_phrase, query, feats)?;
            let (alpha_word, c_word) = self.attend(tape, &self.att_word, &ctx.keys_word, query, feats)?;

            let topic_in = tape.concat(&[query, c_word]);
            let h_w0 = self.topic.apply(tape, topic_in)?;
            let mut wstate = LstmState {
                h: h_w0,
                c: tape.zeros(cfg.word_hidden),
            };
            let gold_words = match policy {
                Policy::Teacher(g) => Some(&g.phrases[t].1),
                Policy::Prefix { gold, .. } if from_gold => Some(&gold.phrases[t].1),
                _ => None,
            };
            if let Some(gw) = gold_words {
                if gw.len() > limits.max_words {
                    return Err(Error::Contract(format!(
                        "gold phrase has {} words, limit is {}",
                        gw.len(),
                        limits.max_words
                    )));
                }
            }
            let mut words = Vec::new();
            let mut embs = Vec::new();
            let mut lp_vars = vec![label_lp];
            let mut word_logps = Vec::new();
            let mut prev_w = BOS;
            for i in 0.. {
                if i >= limits.max_words {
                    break;
                }
                let emb = self.word_emb.lookup(tape, prev_w)?;
                let x = tape.concat(&[c_word, emb]);
                wstate = self.word_lstm.step(tape, wstate, x)?;
                let d_in = tape.concat(&[wstate.h, c_word, emb]);
                let d = self.deep.apply(tape, d_in)?;
                let d = tape.tanh(d);
                let logits = self.out.apply(tape, d)?;
                let wlp = tape.log_softmax(logits);
                let w = match (gold_words, &mut *policy) {
                    (Some(gw), _) => gw.get(i).copied().unwrap_or(EOP),
                    (None, Policy::Greedy) => argmax(tape.value(wlp)),
                    (None, Policy::Sample { rng, temperature }) => sample_index(rng, tape.value(wlp), *temperature),
                    (None, Policy::Prefix { rng, temperature, .. }) => sample_index(rng, tape.value(wlp), *temperature),
                    (None, Policy::Teacher(_)) => unreachable!("teacher always has gold words"),
                };
                let p = tape.pick(wlp, w);
                word_logps.push(tape.scalar(p));
                lp_vars.push(p);
                if w == EOP {
                    break;
                }
                words.push(w);
                embs.push(self.word_emb.lookup(tape, w)?);
                prev_w = w;
            }
            let e = if embs.is_empty() {
                tape.zeros(cfg.word_embed)
            } else {
                tape.mean(&embs)
            };
            let e = self.phrase_enc.apply(tape, e)?;
            let logp = tape.sum_scalars(&lp_vars);
            phrases.push(PhraseStep {
                label,
                words,
                logp,
                label_logp: tape.scalar(label_lp),
                word_logps,
                from_gold,
                alpha_phrase,
                alpha_word,
                label_logits: logits,
            });
            prev_l = l_emb;
            prev_c = c_phrase;
            prev_e = e;
        }
        Ok(Trace { phrases, eos })
    }

    /// λ_att Σ_heads Σ_j (1 − Σ_t α_{t,j})² over the given phrase steps.
    pub fn attention_penalty(&self, tape: &mut Tape, steps: &[PhraseStep], n_locations: usize) -> Var {
        let ones = vec![1.0; n_locations];
        let mut total = Vec::with_capacity(2);
        for head in 0..2 {
            let alphas: Vec<Var> = steps
                .iter()
                .map(|s| if head == 0 { s.alpha_phrase } else { s.alpha_word })
                .collect();
            let neg = if alphas.is_empty() {
                tape.zeros(n_locations)
            } else {
                let mut acc = alphas[0];
                for &a in &alphas[1..] {
                    acc = tape.add(acc, a);
                }
                tape.scale(acc, -1.0)
            };
            let gap = tape.add_const(neg, &ones);
            let sq = tape.square(gap);
            total.push(tape.sum(sq));
        }
        let s = tape.sum_scalars(&total);
        tape.scale(s, self.config.lambda_att)
    }

    /// Teacher-forced cross-entropy plus the attention penalty.
    pub fn mle_loss(&self, tape: &mut Tape, feats: &FeatureGrid, gold: &EncodedCaption) -> Result<Var> {
        if gold.is_empty() {
            return Err(Error::Contract("empty gold caption".into()));
        }
        let trace = self.decode(tape, feats, &mut Policy::Teacher(gold))?;
        let lp = trace.log_prob(tape);
        let nll = tape.scale(lp, -1.0);
        let pen = self.attention_penalty(tape, &trace.phrases, feats.n);
        Ok(tape.add(nll, pen))
    }
}
