//! BLEU / ROUGE-L and the sentence- and phrase-level rewards built on them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_BLEU_ORDER: usize = 5;

/// Quality tag attached to a reference caption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quality {
    #[serde(rename = "GT")]
    Gt,
    Perfect,
    Acceptable,
    GrammarOnly,
}

/// Output class of the feedback network for one phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackClass {
    Correct,
    Wrong,
    NotRelevant,
}

impl FeedbackClass {
    pub const ALL: [FeedbackClass; 3] = [Self::Correct, Self::Wrong, Self::NotRelevant];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub lambdas: [f64; MAX_BLEU_ORDER],
    pub beta_perfect: f64,
    pub beta_acceptable: f64,
    pub beta_grammar_only: f64,
    pub lambda_f: f64,
    pub class_values: [f64; 3],
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambdas: [0.5, 0.5, 1.0, 1.0, 0.3],
            beta_perfect: 1.0,
            beta_acceptable: 0.8,
            beta_grammar_only: 0.6,
            lambda_f: 0.3,
            class_values: [1.0, -1.0, 0.0],
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("reward lambdas must be finite and non-negative".into()));
        }
        for (name, b) in [
            ("beta_perfect", self.beta_perfect),
            ("beta_acceptable", self.beta_acceptable),
            ("beta_grammar_only", self.beta_grammar_only),
        ] {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {b}")));
            }
        }
        if !self.lambda_f.is_finite() {
            return Err(Error::Config("lambda_f must be finite".into()));
        }
        Ok(())
    }

    pub fn beta(&self, q: Quality) -> f64 {
        match q {
            Quality::Gt | Quality::Perfect => self.beta_perfect,
            Quality::Acceptable => self.beta_acceptable,
            Quality::GrammarOnly => self.beta_grammar_only,
        }
    }

    pub fn lambda_sum(&self) -> f64 {
        self.lambdas.iter().sum()
    }
}

/// A reference caption with its quality tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub tokens: Vec<String>,
    pub quality: Quality,
}

impl Reference {
    pub fn new(tokens: Vec<String>, quality: Quality) -> Self {
        Self { tokens, quality }
    }
}

fn ngram_counts<'a, T: AsRef<str>>(tokens: &'a [T], k: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= k {
        for w in tokens.windows(k) {
            *m.entry(w.iter().map(|t| t.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped k-gram matches and candidate k-gram total.
fn modified_precision<T: AsRef<str>, U: AsRef<str>, R: AsRef<[U]>>(cand: &[T], refs: &[R], k: usize) -> (usize, usize) {
    let cc = ngram_counts(cand, k);
    let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
    for r in refs {
        for (g, n) in ngram_counts(r.as_ref(), k) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(n);
        }
    }
    let matched = cc
        .iter()
        .map(|(g, n)| (*n).min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, cand.len().saturating_sub(k - 1))
}

fn closest_ref_len<U, R: AsRef<[U]>>(c: usize, refs: &[R]) -> usize {
    refs.iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn check_bleu_args<T, U, R: AsRef<[U]>>(cand: &[T], refs: &[R], n: usize) -> Result<()> {
    if refs.is_empty() {
        return Err(Error::Contract("BLEU needs at least one reference".into()));
    }
    if cand.is_empty() {
        return Err(Error::Contract("BLEU candidate is empty".into()));
    }
    if !(1..=MAX_BLEU_ORDER).contains(&n) {
        return Err(Error::Contract(format!("BLEU order must be in 1..=5, got {n}")));
    }
    Ok(())
}

/// Sentence-level cumulative BLEU of order `n` with add-1 smoothing on orders ≥ 2.
pub fn bleu_n<T: AsRef<str>, U: AsRef<str>, R: AsRef<[U]>>(cand: &[T], refs: &[R], n: usize) -> Result<f64> {
    bleu_n_with(cand, refs, n, true)
}

/// As [`bleu_n`]; `smooth = false` uses raw precisions at every order.
pub fn bleu_n_with<T: AsRef<str>, U: AsRef<str>, R: AsRef<[U]>>(
    cand: &[T],
    refs: &[R],
    n: usize,
    smooth: bool,
) -> Result<f64> {
    check_bleu_args(cand, refs, n)?;
    Ok(bleu_all(cand, refs, smooth)[n - 1])
}

/// Cumulative BLEU_1..BLEU_5 sharing one n-gram pass.
pub fn bleu_all<T: AsRef<str>, U: AsRef<str>, R: AsRef<[U]>>(
    cand: &[T],
    refs: &[R],
    smooth: bool,
) -> [f64; MAX_BLEU_ORDER] {
    let c = cand.len();
    let r = closest_ref_len(c, refs);
    let bp = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let mut out = [0.0; MAX_BLEU_ORDER];
    let mut log_sum = 0.0;
    let mut dead = false;
    for k in 1..=MAX_BLEU_ORDER {
        let (m, t) = modified_precision(cand, refs, k);
        let p = if k >= 2 && smooth {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        } else if t == 0 {
            0.0
        } else {
            m as f64 / t as f64
        };
        if p == 0.0 {
            dead = true;
        } else {
            log_sum += p.ln();
        }
        out[k - 1] = if dead { 0.0 } else { bp * (log_sum / k as f64).exp() };
    }
    out
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS-based F-measure, maximised over references.
pub fn rouge_l<T: AsRef<str>, U: AsRef<str>, R: AsRef<[U]>>(cand: &[T], refs: &[R]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::Contract("ROUGE-L needs at least one reference".into()));
    }
    let c: Vec<&str> = cand.iter().map(|t| t.as_ref()).collect();
    let best = refs
        .iter()
        .map(|r| {
            let r: Vec<&str> = r.as_ref().iter().map(|t| t.as_ref()).collect();
            let l = lcs_len(&c, &r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / c.len() as f64;
            let rec = l / r.len() as f64;
            let b2 = ROUGE_BETA * ROUGE_BETA;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max);
    Ok(best)
}

/// β(quality) · Σ λ_i BLEU_i(candidate, reference). An empty candidate scores 0.
pub fn sentence_reward<T: AsRef<str>>(cand: &[T], reference: &Reference, cfg: &RewardConfig) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    weighted_bleu(cand, std::slice::from_ref(&reference.tokens), cfg) * cfg.beta(reference.quality)
}

/// Σ λ_i BLEU_i against a reference pool (β = 1).
pub fn weighted_bleu<T: AsRef<str>, R: AsRef<[String]>>(cand: &[T], refs: &[R], cfg: &RewardConfig) -> f64 {
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let refs: Vec<&[String]> = refs.iter().map(|r| r.as_ref()).collect();
    let b = bleu_all(cand, &refs, true);
    b.iter().zip(cfg.lambdas).map(|(b, l)| b * l).sum()
}

/// Sum of per-feedback class values; zero without feedback.
pub fn fbn_phrase_score<I: IntoIterator<Item = FeedbackClass>>(classes: I, cfg: &RewardConfig) -> f64 {
    classes.into_iter().map(|c| cfg.class_values[c.index()]).sum()
}

pub fn phrase_reward(sentence: f64, fbn_score: f64, cfg: &RewardConfig) -> f64 {
    sentence + cfg.lambda_f * fbn_score
}

/// Mean sentence-level metrics of a set of captions against their reference pools.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub weighted: f64,
}

pub fn metric_report<T: AsRef<str>>(items: &[(Vec<T>, Vec<Vec<String>>)], cfg: &RewardConfig) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::Contract("metric report over zero captions".into()));
    }
    let mut acc = [0.0f64; 6];
    for (cand, refs) in items {
        if refs.is_empty() {
            return Err(Error::Contract("caption without references".into()));
        }
        if cand.is_empty() {
            continue;
        }
        let b = bleu_all(cand, refs, true);
        for k in 0..4 {
            acc[k] += b[k];
        }
        acc[4] += rouge_l(cand, refs)?;
        acc[5] += b.iter().zip(cfg.lambdas).map(|(b, l)| b * l).sum::<f64>();
    }
    let n = items.len() as f64;
    Ok(MetricReport {
        bleu1: acc[0] / n,
        bleu2: acc[1] / n,
        bleu3: acc[2] / n,
        bleu4: acc[3] / n,
        rouge_l: acc[4] / n,
        weighted: acc[5] / n,
    })
}
