use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{mistake_index, FbnExample, NUM_MISTAKE_TYPES};
use crate::corpus::{tokenize, Phrase, PhrasedCaption, Vocabulary};
use crate::error::{Error, Result};
use crate::feedback::MistakeCategory;
use crate::numerics::{
    adam_step, argmax, dropout_mask, Activation, AdamConfig, AdamState, Checkpoint, Embedding, Grads, Linear, LstmCell,
    Mlp, MlpSpec, ParamStore, Tape, Var, GRAD_CLIP_NORM,
};
use crate::rewards::{fbn_phrase_score, FeedbackClass, RewardConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FbnConfig {
    pub embed: usize,
    pub hidden: usize,
    pub phrase: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
}

impl Default for FbnConfig {
    fn default() -> Self {
        Self {
            embed: 32,
            hidden: 64,
            phrase: 32,
            mlp_hidden: 128,
            dropout: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FbnModel {
    pub config: FbnConfig,
    emb: Embedding,
    sent: LstmCell,
    phrase: Linear,
    mlp: Mlp,
}

/// Examples sharing a caption and feedback sentence, encoded as word ids.
#[derive(Debug, Clone)]
pub struct FbnGroup {
    pub caption: Vec<usize>,
    pub phrases: Vec<Vec<usize>>,
    pub feedback: Vec<usize>,
    /// (phrase index, mistake-type index, label)
    pub items: Vec<(usize, usize, FeedbackClass)>,
}

impl FbnModel {
    pub fn new(config: &FbnConfig, vocab_size: usize, store: &mut ParamStore, seed: u64) -> Result<Self> {
        let c = config;
        if [c.embed, c.hidden, c.phrase, c.mlp_hidden].contains(&0) {
            return Err(Error::Config("feedback network dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", c.dropout)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let emb = Embedding::new(store, "fbn.emb", vocab_size, c.embed, rng)?;
        let sent = LstmCell::new(store, "fbn.sent", c.embed, c.hidden, rng)?;
        let phrase = Linear::new(store, "fbn.phrase", c.embed, c.phrase, rng)?;
        let input = 2 * c.hidden + c.phrase + NUM_MISTAKE_TYPES;
        let mlp = Mlp::new(
            store,
            "fbn.mlp",
            &MlpSpec::uniform(input, c.mlp_hidden, 3, 3, Activation::Relu, Activation::Identity),
            rng,
        )?;
        Ok(Self {
            config: config.clone(),
            emb,
            sent,
            phrase,
            mlp,
        })
    }

    /// Final hidden state of the shared sentence LSTM.
    pub fn encode_sentence(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Contract("cannot encode an empty sentence".into()));
        }
        let mut state = self.sent.zero_state(tape);
        for &w in ids {
            let x = self.emb.lookup(tape, w)?;
            state = self.sent.step(tape, state, x)?;
        }
        Ok(state.h)
    }

    /// Mean of linearly mapped word embeddings.
    pub fn encode_phrase(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Contract("cannot encode an empty phrase".into()));
        }
        let embs = ids
            .iter()
            .map(|&w| self.emb.lookup(tape, w))
            .collect::<Result<Vec<_>>>()?;
        let mean = tape.mean(&embs);
        self.phrase.apply(tape, mean)
    }

    pub fn logits(
        &self,
        tape: &mut Tape,
        h_c: Var,
        h_f: Var,
        q: Var,
        m: usize,
        mask: &mut dyn FnMut(usize, usize) -> Option<Vec<f64>>,
    ) -> Result<Var> {
        let mut onehot = vec![0.0; NUM_MISTAKE_TYPES];
        onehot[m] = 1.0;
        let m = tape.constant(onehot);
        let x = tape.concat(&[h_c, h_f, q, m]);
        self.mlp.apply_with_mask(tape, x, mask)
    }

    /// Summed cross-entropy over a group's items.
    pub fn group_loss(
        &self,
        tape: &mut Tape,
        g: &FbnGroup,
        mask: &mut dyn FnMut(usize, usize) -> Option<Vec<f64>>,
    ) -> Result<Var> {
        let h_c = self.encode_sentence(tape, &g.caption)?;
        let h_f = self.encode_sentence(tape, &g.feedback)?;
        let mut q_cache: HashMap<usize, Var> = HashMap::new();
        let mut terms = Vec::with_capacity(g.items.len());
        for &(i, m, label) in &g.items {
            let q = match q_cache.get(&i) {
                Some(&q) => q,
                None => {
                    let q = self.encode_phrase(tape, &g.phrases[i])?;
                    q_cache.insert(i, q);
                    q
                }
            };
            let logits = self.logits(tape, h_c, h_f, q, m, mask)?;
            let lp = tape.log_softmax(logits);
            terms.push(tape.pick(lp, label.index()));
        }
        let s = tape.sum_scalars(&terms);
        Ok(tape.scale(s, -1.0))
    }
}

/// The trained classifier with its own vocabulary.
#[derive(Debug, Clone)]
pub struct Fbn {
    pub model: FbnModel,
    pub store: ParamStore,
    pub vocab: Vocabulary,
}

pub const FBN_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FbnCheckpoint {
    pub version: u32,
    pub config: FbnConfig,
    pub vocab: Vocabulary,
    pub params: Checkpoint,
}

fn caption_words(phrases: &[Phrase]) -> impl Iterator<Item = &String> {
    phrases.iter().flat_map(|p| p.words.iter())
}

/// Vocabulary over caption words and tokenized feedback of `examples`.
pub fn fbn_vocab(examples: &[FbnExample]) -> Vocabulary {
    let mut words: Vec<String> = Vec::new();
    for e in examples {
        words.extend(caption_words(&e.caption).cloned());
        words.extend(tokenize(&e.feedback));
    }
    Vocabulary::from_words(words)
}

impl Fbn {
    pub fn new(config: &FbnConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = FbnModel::new(config, vocab.len(), &mut store, seed)?;
        Ok(Self { model, store, vocab })
    }

    fn ids(&self, words: &[String]) -> Vec<usize> {
        self.vocab.encode(words)
    }

    /// Groups examples by (caption, feedback), preserving first-seen order.
    pub fn group(&self, examples: &[FbnExample], ignore_mistake: bool) -> Result<Vec<FbnGroup>> {
        let mut index: HashMap<(&[Phrase], &str), usize> = HashMap::new();
        let mut groups: Vec<FbnGroup> = Vec::new();
        for e in examples {
            if e.phrase_index >= e.caption.len() {
                return Err(Error::validation(
                    "phrase_index",
                    format!("caption has {} phrases", e.caption.len()),
                ));
            }
            let key = (e.caption.as_slice(), e.feedback.as_str());
            let gi = match index.get(&key) {
                Some(&gi) => gi,
                None => {
                    let feedback = self.ids(&tokenize(&e.feedback));
                    if feedback.is_empty() {
                        return Err(Error::Contract("empty feedback sentence".into()));
                    }
                    let caption: Vec<String> = caption_words(&e.caption).cloned().collect();
                    groups.push(FbnGroup {
                        caption: self.ids(&caption),
                        phrases: e.caption.iter().map(|p| self.ids(&p.words)).collect(),
                        feedback,
                        items: vec![],
                    });
                    index.insert(key, groups.len() - 1);
                    groups.len() - 1
                }
            };
            let m = if ignore_mistake {
                mistake_index(None)
            } else {
                mistake_index(e.mistake_type)
            };
            groups[gi].items.push((e.phrase_index, m, e.label));
        }
        Ok(groups)
    }

    /// Class probabilities for every phrase of `caption` under one feedback sentence.
    pub fn caption_probs(
        &self,
        caption: &PhrasedCaption,
        feedback: &str,
        m: Option<MistakeCategory>,
    ) -> Result<Vec<[f64; 3]>> {
        let fb = self.ids(&tokenize(feedback));
        if fb.is_empty() {
            return Err(Error::Contract("empty feedback sentence".into()));
        }
        if caption.is_empty() {
            return Ok(vec![]);
        }
        let words: Vec<String> = caption.tokens().into_iter().map(str::to_string).collect();
        let mut tape = Tape::new(&self.store);
        let h_c = self.model.encode_sentence(&mut tape, &self.ids(&words))?;
        let h_f = self.model.encode_sentence(&mut tape, &fb)?;
        let mut out = Vec::with_capacity(caption.len());
        for p in &caption.phrases {
            let q = self.model.encode_phrase(&mut tape, &self.ids(&p.words))?;
            let logits = self
                .model
                .logits(&mut tape, h_c, h_f, q, mistake_index(m), &mut |_, _| None)?;
            let probs = tape.softmax(logits);
            let v = tape.value(probs);
            out.push([v[0], v[1], v[2]]);
        }
        Ok(out)
    }

    /// Distribution over correct / wrong / not relevant for one phrase.
    pub fn forward(
        &self,
        caption: &PhrasedCaption,
        feedback: &str,
        phrase_index: usize,
        m: Option<MistakeCategory>,
    ) -> Result<[f64; 3]> {
        if phrase_index >= caption.len() {
            return Err(Error::Contract(format!(
                "phrase index {phrase_index} outside a {}-phrase caption",
                caption.len()
            )));
        }
        Ok(self.caption_probs(caption, feedback, m)?[phrase_index])
    }

    pub fn classify(
        &self,
        caption: &PhrasedCaption,
        feedback: &str,
        m: Option<MistakeCategory>,
    ) -> Result<Vec<FeedbackClass>> {
        Ok(self
            .caption_probs(caption, feedback, m)?
            .iter()
            .map(|p| FeedbackClass::from_index(argmax(p)).expect("3 classes"))
            .collect())
    }

    /// Encodes one feedback sentence for repeated scoring.
    pub fn encode_feedback(&self, text: &str, m: Option<MistakeCategory>) -> Result<FeedbackCode> {
        let fb = self.ids(&tokenize(text));
        if fb.is_empty() {
            return Err(Error::Contract("empty feedback sentence".into()));
        }
        let mut tape = Tape::new(&self.store);
        let h = self.model.encode_sentence(&mut tape, &fb)?;
        Ok(FeedbackCode {
            h: tape.value(h).to_vec(),
            m: mistake_index(m),
        })
    }

    /// Per-phrase feedback score summed over all feedback sentences of an image.
    pub fn phrase_scores(
        &self,
        caption: &PhrasedCaption,
        feedback: &[(String, Option<MistakeCategory>)],
        cfg: &RewardConfig,
    ) -> Result<Vec<f64>> {
        if caption.is_empty() || feedback.is_empty() {
            return Ok(vec![0.0; caption.len()]);
        }
        let codes = feedback
            .iter()
            .map(|(text, m)| self.encode_feedback(text, *m))
            .collect::<Result<Vec<_>>>()?;
        self.phrase_scores_coded(caption, &codes, cfg)
    }

    /// [`Fbn::phrase_scores`] over pre-encoded feedback sentences.
    pub fn phrase_scores_coded(
        &self,
        caption: &PhrasedCaption,
        feedback: &[FeedbackCode],
        cfg: &RewardConfig,
    ) -> Result<Vec<f64>> {
        if caption.is_empty() || feedback.is_empty() {
            return Ok(vec![0.0; caption.len()]);
        }
        let words: Vec<String> = caption.tokens().into_iter().map(str::to_string).collect();
        let mut tape = Tape::new(&self.store);
        let h_c = self.model.encode_sentence(&mut tape, &self.ids(&words))?;
        let qs = caption
            .phrases
            .iter()
            .map(|p| self.model.encode_phrase(&mut tape, &self.ids(&p.words)))
            .collect::<Result<Vec<_>>>()?;
        let mut per_phrase: Vec<Vec<FeedbackClass>> = vec![vec![]; caption.len()];
        for code in feedback {
            let h_f = tape.constant(code.h.clone());
            for (i, &q) in qs.iter().enumerate() {
                let logits = self.model.logits(&mut tape, h_c, h_f, q, code.m, &mut |_, _| None)?;
                per_phrase[i].push(FeedbackClass::from_index(argmax(tape.value(logits))).expect("3 classes"));
            }
        }
        Ok(per_phrase.into_iter().map(|cs| fbn_phrase_score(cs, cfg)).collect())
    }

    pub fn to_checkpoint(&self) -> FbnCheckpoint {
        FbnCheckpoint {
            version: FBN_CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            vocab: self.vocab.clone(),
            params: self.store.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &FbnCheckpoint) -> Result<Self> {
        if ck.version != FBN_CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported feedback-network checkpoint version {}",
                ck.version
            )));
        }
        let mut f = Self::new(&ck.config, ck.vocab.clone(), 0)?;
        f.store.load_values_from(&ParamStore::from_checkpoint(&ck.params)?)?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: FbnCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_checkpoint(&ck)
    }
}

/// A feedback sentence encoded by a fixed network, with its mistake index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackCode {
    h: Vec<f64>,
    m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FbnTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub test_fraction: f64,
    /// Feed "none" as the mistake type for every example.
    pub ignore_mistake: bool,
}

impl Default for FbnTrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            batch: 256,
            epochs: 20,
            seed: 0,
            test_fraction: 0.1,
            ignore_mistake: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbnEval {
    pub accuracy: f64,
    /// `confusion[true][predicted]`, classes ordered correct, wrong, not relevant.
    pub confusion: [[usize; 3]; 3],
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbnEpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// `None` when there is no held-out split.
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbnTrainReport {
    pub epochs: Vec<FbnEpochLog>,
    pub test: FbnEval,
    /// Accuracy of always predicting the most frequent training label.
    pub majority_baseline: f64,
    pub train_examples: usize,
    pub test_examples: usize,
}

pub fn eval_groups(fbn: &Fbn, groups: &[FbnGroup]) -> Result<FbnEval> {
    let mut confusion = [[0usize; 3]; 3];
    let mut count = 0;
    for g in groups {
        let mut tape = Tape::new(&fbn.store);
        let h_c = fbn.model.encode_sentence(&mut tape, &g.caption)?;
        let h_f = fbn.model.encode_sentence(&mut tape, &g.feedback)?;
        for &(i, m, label) in &g.items {
            let q = fbn.model.encode_phrase(&mut tape, &g.phrases[i])?;
            let logits = fbn.model.logits(&mut tape, h_c, h_f, q, m, &mut |_, _| None)?;
            let pred = argmax(tape.value(logits));
            confusion[label.index()][pred] += 1;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Contract("evaluating on an empty dataset".into()));
    }
    let correct: usize = (0..3).map(|k| confusion[k][k]).sum();
    Ok(FbnEval {
        accuracy: correct as f64 / count as f64,
        confusion,
        count,
    })
}

pub fn eval_fbn(fbn: &Fbn, examples: &[FbnExample]) -> Result<FbnEval> {
    if examples.is_empty() {
        return Err(Error::Contract("evaluating on an empty dataset".into()));
    }
    eval_groups(fbn, &fbn.group(examples, false)?)
}

/// Splits by (caption, feedback) group, trains on the larger part and reports
/// accuracy on the held-out part.
pub fn train_fbn(
    examples: &[FbnExample],
    model_cfg: &FbnConfig,
    cfg: &FbnTrainConfig,
) -> Result<(Fbn, FbnTrainReport)> {
    let mut counts = [0usize; 3];
    for e in examples {
        counts[e.label.index()] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 3 {
        return Err(Error::Config(format!(
            "feedback dataset lacks a class: counts {counts:?}"
        )));
    }
    if cfg.batch == 0 || !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::Config(
            "batch must be positive and test_fraction in [0, 1)".into(),
        ));
    }
    let mut fbn = Fbn::new(model_cfg, fbn_vocab(examples), cfg.seed)?;
    let mut groups = fbn.group(examples, cfg.ignore_mistake)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    groups.shuffle(&mut rng);
    let n_test = ((groups.len() as f64) * cfg.test_fraction).round() as usize;
    let test = groups.split_off(groups.len() - n_test);
    let train = groups;
    let mut train_counts = [0usize; 3];
    for g in &train {
        for it in &g.items {
            train_counts[it.2.index()] += 1;
        }
    }
    let majority = *train_counts.iter().max().unwrap();
    let train_total: usize = train_counts.iter().sum();
    let test_total: usize = test.iter().map(|g| g.items.len()).sum();

    let mut adam = AdamState::new(
        &fbn.store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let rate = fbn.model.config.dropout;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut start = 0;
        while start < order.len() {
            let mut end = start;
            let mut n = 0;
            while end < order.len() && n < cfg.batch {
                n += train[order[end]].items.len();
                end += 1;
            }
            let mut grads = Grads::zeros_like(&fbn.store);
            for &gi in &order[start..end] {
                let mut tape = Tape::new(&fbn.store);
                let mut mask = |_: usize, dim: usize| (rate > 0.0).then(|| dropout_mask(&mut rng, dim, rate));
                let loss = fbn.model.group_loss(&mut tape, &train[gi], &mut mask)?;
                let v = tape.scalar(loss);
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "feedback-network loss diverged at epoch {epoch}: {v}"
                    )));
                }
                total += v;
                tape.backward_scaled(loss, 1.0 / n as f64, &mut grads)?;
            }
            grads.clip_global_norm(GRAD_CLIP_NORM);
            adam_step(&mut fbn.store, &grads, &mut adam)?;
            start = end;
        }
        let test_accuracy = if test.is_empty() {
            None
        } else {
            Some(eval_groups(&fbn, &test)?.accuracy)
        };
        epochs.push(FbnEpochLog {
            epoch,
            loss: total / train_total as f64,
            test_accuracy,
        });
    }
    let test_eval = if test.is_empty() {
        eval_groups(&fbn, &train)?
    } else {
        eval_groups(&fbn, &test)?
    };
    Ok((
        fbn,
        FbnTrainReport {
            epochs,
            test: test_eval,
            majority_baseline: majority as f64 / train_total as f64,
            train_examples: train_total,
            test_examples: test_total,
        },
    ))
}
