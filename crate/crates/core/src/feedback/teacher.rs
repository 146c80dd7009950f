//! Scripted stand-in for a human annotator: rates captions against the scene,
//! describes one mistake per round and proposes its correction.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{
    apply_correction, ErrorType, FeedbackRecord, MistakeCategory, Provenance, Rating, RoundEntry, Span,
};
use crate::corpus::{Grammar, LandmarkDet, Phrase, PhraseLabel, PhrasedCaption, Scene, Slot, TaggedPhrase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    /// Probability of a feedback sentence that names no words.
    pub vague_prob: f64,
    pub max_rounds: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            vague_prob: 0.15,
            max_rounds: 3,
        }
    }
}

const VAGUE: [&str; 3] = [
    "that is not right .",
    "something is wrong here .",
    "please fix this part .",
];

#[derive(Debug, Clone, PartialEq)]
struct Issue {
    position: usize,
    inserts_phrase: bool,
    word_pos: usize,
    severity: Rating,
    error_type: ErrorType,
    category: MistakeCategory,
    span: Span,
    wrong: Vec<(String, Option<Slot>)>,
    correction: Vec<(String, Slot)>,
    correction_label: Option<PhraseLabel>,
    context_obj: Option<String>,
}

fn severity(cat: MistakeCategory, error_type: ErrorType) -> Rating {
    match cat {
        MistakeCategory::Object | MistakeCategory::Action | MistakeCategory::Counting => Rating::Major,
        MistakeCategory::Attribute if error_type == ErrorType::Missing => Rating::Acceptable,
        MistakeCategory::Attribute | MistakeCategory::Preposition => Rating::Minor,
        MistakeCategory::Grammar => Rating::GrammarOnly,
    }
}

fn category_of<I: IntoIterator<Item = Option<Slot>>>(slots: I) -> MistakeCategory {
    let rank = |s: Option<Slot>| match s {
        Some(Slot::Obj) => (0, MistakeCategory::Object),
        Some(Slot::Action) => (1, MistakeCategory::Action),
        Some(Slot::Attr) => (2, MistakeCategory::Attribute),
        Some(Slot::Rel) => (3, MistakeCategory::Preposition),
        _ => (4, MistakeCategory::Grammar),
    };
    slots
        .into_iter()
        .map(rank)
        .min()
        .map_or(MistakeCategory::Grammar, |r| r.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EditOp {
    Match,
    Sub,
    /// Reference word absent from the caption.
    Del,
    /// Caption word absent from the reference.
    Ins,
}

/// Levenshtein alignment of `cap` against `reference`, as an op sequence.
fn word_alignment(cap: &[String], reference: &[String]) -> (usize, Vec<EditOp>) {
    let (n, m) = (cap.len(), reference.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(cap[i - 1] != reference[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(cap[i - 1] != reference[j - 1]) {
            ops.push(if cap[i - 1] == reference[j - 1] {
                EditOp::Match
            } else {
                EditOp::Sub
            });
            i -= 1;
            j -= 1;
        } else if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            ops.push(EditOp::Del);
            j -= 1;
        } else {
            ops.push(EditOp::Ins);
            i -= 1;
        }
    }
    ops.reverse();
    (d[n][m], ops)
}

fn words_of(p: &TaggedPhrase) -> Vec<String> {
    p.words.iter().map(|(w, _)| w.clone()).collect()
}

#[derive(Debug, Clone)]
pub struct Teacher {
    pub grammar: Grammar,
    pub config: TeacherConfig,
}

impl Teacher {
    pub fn new(grammar: Grammar, config: TeacherConfig) -> Self {
        Self { grammar, config }
    }

    fn last_obj_before(phrases: &[TaggedPhrase], j: usize) -> Option<String> {
        phrases[..j]
            .iter()
            .rev()
            .flat_map(|p| p.words.iter().rev())
            .find(|(_, s)| *s == Slot::Obj)
            .map(|(w, _)| w.clone())
    }

    fn issues_against(&self, caption: &PhrasedCaption, reference: &[TaggedPhrase]) -> Vec<Issue> {
        let cap = &caption.phrases;
        let (n, m) = (cap.len(), reference.len());
        const INF: usize = usize::MAX / 4;
        let ref_words: Vec<Vec<String>> = reference.iter().map(words_of).collect();
        let sub_cost = |i: usize, j: usize| {
            if cap[i].label == reference[j].label {
                word_alignment(&cap[i].words, &ref_words[j]).0
            } else {
                INF
            }
        };
        let mut d = vec![vec![0usize; m + 1]; n + 1];
        for i in 1..=n {
            d[i][0] = d[i - 1][0] + cap[i - 1].words.len() + 1;
        }
        for j in 1..=m {
            d[0][j] = d[0][j - 1] + ref_words[j - 1].len() + 1;
        }
        for i in 1..=n {
            for j in 1..=m {
                let s = d[i - 1][j - 1].saturating_add(sub_cost(i - 1, j - 1));
                let del = d[i][j - 1] + ref_words[j - 1].len() + 1;
                let ins = d[i - 1][j] + cap[i - 1].words.len() + 1;
                d[i][j] = s.min(del).min(ins);
            }
        }
        let mut issues = Vec::new();
        let (mut i, mut j) = (n, m);
        while i > 0 || j > 0 {
            if i > 0 && j > 0 && sub_cost(i - 1, j - 1) < INF && d[i][j] == d[i - 1][j - 1] + sub_cost(i - 1, j - 1) {
                self.phrase_issues(cap, i - 1, reference, j - 1, &mut issues);
                i -= 1;
                j -= 1;
            } else if j > 0 && d[i][j] == d[i][j - 1] + ref_words[j - 1].len() + 1 {
                let r = &reference[j - 1];
                let category = category_of(r.words.iter().map(|(_, s)| Some(*s)));
                issues.push(Issue {
                    position: i,
                    inserts_phrase: true,
                    word_pos: 0,
                    severity: severity(category, ErrorType::Missing),
                    error_type: ErrorType::Missing,
                    category,
                    span: Span {
                        phrase_index: i,
                        word_start: 0,
                        word_end: 0,
                    },
                    wrong: vec![],
                    correction: r.words.clone(),
                    correction_label: Some(r.label),
                    context_obj: Self::last_obj_before(reference, j - 1),
                });
                j -= 1;
            } else {
                let p = &cap[i - 1];
                let dup = reference.iter().any(|r| r.label == p.label && words_of(r) == p.words);
                let slots: Vec<Option<Slot>> = p.words.iter().map(|w| self.grammar.word_slot(w)).collect();
                let category = if dup {
                    MistakeCategory::Grammar
                } else {
                    category_of(slots.iter().copied())
                };
                issues.push(Issue {
                    position: i - 1,
                    inserts_phrase: false,
                    word_pos: 0,
                    severity: severity(category, ErrorType::Remove),
                    error_type: ErrorType::Remove,
                    category,
                    span: Span {
                        phrase_index: i - 1,
                        word_start: 0,
                        word_end: p.words.len(),
                    },
                    wrong: p.words.iter().cloned().zip(slots).collect(),
                    correction: vec![],
                    correction_label: None,
                    context_obj: Self::last_obj_before(reference, j),
                });
                i -= 1;
            }
        }
        issues.reverse();
        issues
    }

    fn phrase_issues(&self, cap: &[Phrase], i: usize, reference: &[TaggedPhrase], j: usize, out: &mut Vec<Issue>) {
        let r = &reference[j];
        let rw = words_of(r);
        let cw = &cap[i].words;
        let (_, ops) = word_alignment(cw, &rw);
        let obj_here = r.words.iter().find(|(_, s)| *s == Slot::Obj).map(|(w, _)| w.clone());
        let context_obj = obj_here.or_else(|| Self::last_obj_before(reference, j));
        let (mut ci, mut ri) = (0usize, 0usize);
        let mut k = 0;
        let mut regions = Vec::new();
        while k < ops.len() {
            if ops[k] == EditOp::Match {
                ci += 1;
                ri += 1;
                k += 1;
                continue;
            }
            let (c0, r0) = (ci, ri);
            while k < ops.len() && ops[k] != EditOp::Match {
                match ops[k] {
                    EditOp::Sub => {
                        ci += 1;
                        ri += 1;
                    }
                    EditOp::Del => ri += 1,
                    EditOp::Ins => ci += 1,
                    EditOp::Match => unreachable!(),
                }
                k += 1;
            }
            regions.push((c0, ci, r0, ri));
        }
        for (c0, c1, r0, r1) in regions {
            let wrong: Vec<(String, Option<Slot>)> = cw[c0..c1]
                .iter()
                .map(|w| (w.clone(), self.grammar.word_slot(w)))
                .collect();
            let correction = r.words[r0..r1].to_vec();
            let error_type = match (c0 == c1, r0 == r1) {
                (false, false) => ErrorType::Replace,
                (true, _) => ErrorType::Missing,
                (false, true) => ErrorType::Remove,
            };
            let category = match error_type {
                ErrorType::Remove => category_of(wrong.iter().map(|w| w.1)),
                ErrorType::Missing => category_of(correction.iter().map(|c| Some(c.1))),
                ErrorType::Replace => {
                    category_of(correction.iter().map(|c| Some(c.1)).chain(wrong.iter().map(|w| w.1)))
                }
            };
            out.push(Issue {
                position: i,
                inserts_phrase: false,
                word_pos: c0,
                severity: severity(category, error_type),
                error_type,
                category,
                span: Span {
                    phrase_index: i,
                    word_start: c0,
                    word_end: c1,
                },
                wrong,
                correction,
                correction_label: None,
                context_obj: context_obj.clone(),
            });
        }
    }

    /// Issues against whichever surface variant of the scene fits best.
    fn issues(&self, scene: &Scene, caption: &PhrasedCaption) -> Result<Vec<Issue>> {
        let mut best: Option<(Rating, usize, Vec<Issue>)> = None;
        for det in [LandmarkDet::A, LandmarkDet::The] {
            let reference = self.grammar.tagged(scene, det)?;
            let issues = self.issues_against(caption, &reference);
            let worst = issues.iter().map(|x| x.severity).max().unwrap_or(Rating::Perfect);
            let key = (worst, issues.len());
            if best.as_ref().is_none_or(|b| key < (b.0, b.1)) {
                best = Some((worst, issues.len(), issues));
            }
        }
        Ok(best.expect("two variants").2)
    }

    /// Round-1 quality of `caption` for `scene`.
    pub fn rate(&self, scene: &Scene, caption: &PhrasedCaption) -> Result<Rating> {
        Ok(self
            .issues(scene, caption)?
            .iter()
            .map(|x| x.severity)
            .max()
            .unwrap_or(Rating::Perfect))
    }

    /// Severity and number of remaining mistakes; lower is better.
    pub fn score(&self, scene: &Scene, caption: &PhrasedCaption) -> Result<(Rating, usize)> {
        let issues = self.issues(scene, caption)?;
        Ok((
            issues.iter().map(|x| x.severity).max().unwrap_or(Rating::Perfect),
            issues.len(),
        ))
    }

    /// Feedback on the first erroneous phrase, or `None` for an error-free caption.
    pub fn critique(
        &self,
        scene: &Scene,
        caption: &PhrasedCaption,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<RoundEntry>> {
        let issues = self.issues(scene, caption)?;
        let Some(first) = issues.iter().map(|x| (x.position, !x.inserts_phrase)).min() else {
            return Ok(None);
        };
        let issue = issues
            .iter()
            .filter(|x| (x.position, !x.inserts_phrase) == first)
            .min_by_key(|x| (std::cmp::Reverse(x.severity), x.word_pos))
            .expect("non-empty group");
        let vague = rng.random_bool(self.config.vague_prob);
        let feedback_text = if vague {
            VAGUE.choose(rng).expect("non-empty").to_string()
        } else {
            feedback_sentence(issue)
        };
        let mut entry = RoundEntry {
            error_type: issue.error_type,
            feedback_text,
            mistake_category: issue.category,
            span: issue.span,
            correction: issue.correction.iter().map(|(w, _)| w.clone()).collect(),
            correction_label: issue.correction_label,
            post_quality: Rating::Perfect,
        };
        let next = apply_correction(caption, &entry)?;
        entry.post_quality = self.rate(scene, &next)?;
        Ok(Some(entry))
    }

    /// Full scripted annotation of one caption: rating plus up to
    /// `max_rounds` rounds of feedback, each applied to the previous correction.
    pub fn teach(&self, scene: &Scene, caption: &PhrasedCaption, rng: &mut ChaCha8Rng) -> Result<FeedbackRecord> {
        if caption.is_empty() {
            return Err(Error::Contract("cannot annotate an empty caption".into()));
        }
        let quality = self.rate(scene, caption)?;
        let mut rounds = Vec::new();
        let mut current = caption.clone();
        if quality.needs_feedback() {
            for _ in 0..self.config.max_rounds {
                let Some(entry) = self.critique(scene, &current, rng)? else {
                    break;
                };
                current = apply_correction(&current, &entry)?;
                let done = !entry.post_quality.needs_feedback();
                rounds.push(entry);
                if done {
                    break;
                }
            }
        }
        Ok(FeedbackRecord {
            image_id: scene.id,
            caption: caption.clone(),
            quality,
            rounds,
            provenance: Provenance::Scripted,
        })
    }

    /// A caption for `scene` with between one and three injected mistakes.
    pub fn corrupt_caption(&self, scene: &Scene, rng: &mut ChaCha8Rng) -> Result<PhrasedCaption> {
        let det = if rng.random_bool(0.5) {
            LandmarkDet::A
        } else {
            LandmarkDet::The
        };
        let mut phrases = self.grammar.tagged(scene, det)?;
        let count = match rng.random_range(0..10) {
            0..=5 => 1,
            6..=8 => 2,
            _ => 3,
        };
        for _ in 0..count {
            self.corrupt_once(&mut phrases, rng)?;
        }
        Ok(PhrasedCaption::new(phrases.iter().map(TaggedPhrase::plain).collect()))
    }

    fn corrupt_once(&self, phrases: &mut Vec<TaggedPhrase>, rng: &mut ChaCha8Rng) -> Result<()> {
        let g = &self.grammar;
        let slot_positions = |phrases: &[TaggedPhrase], slot: Slot| -> Vec<(usize, usize)> {
            phrases
                .iter()
                .enumerate()
                .flat_map(|(i, p)| {
                    p.words
                        .iter()
                        .enumerate()
                        .filter(move |(_, w)| w.1 == slot)
                        .map(move |(k, _)| (i, k))
                })
                .collect()
        };
        let other = |rng: &mut ChaCha8Rng, pool: &[String], current: &str| -> String {
            loop {
                let w = pool.choose(rng).expect("non-empty lexicon");
                if w != current {
                    return w.clone();
                }
            }
        };
        for _ in 0..32 {
            match rng.random_range(0..10) {
                0 | 1 => {
                    let pos = slot_positions(phrases, Slot::Obj);
                    if let Some(&(i, k)) = pos.choose(rng) {
                        let cur = phrases[i].words[k].0.clone();
                        phrases[i].words[k].0 = other(rng, &g.objects, &cur);
                        return Ok(());
                    }
                }
                2 => {
                    let pos = slot_positions(phrases, Slot::Attr);
                    if let Some(&(i, k)) = pos.choose(rng) {
                        let cur = phrases[i].words[k].0.clone();
                        phrases[i].words[k].0 = other(rng, &g.attributes, &cur);
                        return Ok(());
                    }
                }
                3 => {
                    let pos = slot_positions(phrases, Slot::Action);
                    if let Some(&(i, k)) = pos.choose(rng) {
                        let cur = phrases[i].words[k].0.clone();
                        phrases[i].words[k].0 = other(rng, &g.actions, &cur);
                        return Ok(());
                    }
                }
                4 => {
                    if let Some(i) = phrases.iter().position(|p| p.words.iter().any(|w| w.1 == Slot::Rel)) {
                        let cur: Vec<String> = phrases[i]
                            .words
                            .iter()
                            .filter(|w| w.1 == Slot::Rel)
                            .map(|w| w.0.clone())
                            .collect();
                        let choices: Vec<&Vec<String>> = g.relations.iter().flatten().filter(|r| **r != cur).collect();
                        if let Some(new) = choices.choose(rng) {
                            let rest: Vec<(String, Slot)> =
                                phrases[i].words.iter().filter(|w| w.1 != Slot::Rel).cloned().collect();
                            let mut words: Vec<(String, Slot)> = new.iter().map(|w| (w.clone(), Slot::Rel)).collect();
                            words.extend(rest);
                            phrases[i].words = words;
                            return Ok(());
                        }
                    }
                }
                5 => {
                    let pos = slot_positions(phrases, Slot::Attr);
                    if let Some(&(i, k)) = pos.choose(rng) {
                        phrases[i].words.remove(k);
                        return Ok(());
                    }
                }
                6 => {
                    if phrases.len() > 1 {
                        let i = rng.random_range(1..phrases.len());
                        phrases.remove(i);
                        return Ok(());
                    }
                }
                7 => {
                    if phrases.len() < 7 {
                        let rel = g.relations.iter().flatten().collect::<Vec<_>>();
                        let rel = rel.choose(rng).expect("relations");
                        let mut words: Vec<(String, Slot)> = rel.iter().map(|w| (w.clone(), Slot::Rel)).collect();
                        words.push(("a".into(), Slot::Det));
                        words.push((g.objects.choose(rng).expect("objects").clone(), Slot::Obj));
                        phrases.push(TaggedPhrase {
                            label: PhraseLabel::PP,
                            words,
                        });
                        return Ok(());
                    }
                }
                8 => {
                    if phrases.len() < 7 {
                        let i = rng.random_range(0..phrases.len());
                        let p = phrases[i].clone();
                        phrases.insert(i, p);
                        return Ok(());
                    }
                }
                _ => {
                    if phrases.len() > 1 && phrases[1].label != PhraseLabel::VP {
                        let act = g.actions.choose(rng).expect("actions").clone();
                        phrases.insert(
                            1,
                            TaggedPhrase {
                                label: PhraseLabel::VP,
                                words: vec![("is".into(), Slot::Aux), (act, Slot::Action)],
                            },
                        );
                        return Ok(());
                    }
                }
            }
        }
        Err(Error::Contract("no applicable corruption".into()))
    }
}

fn key_words<'a, I: Iterator<Item = (&'a str, Option<Slot>)> + Clone>(words: I, cat: MistakeCategory) -> String {
    let want = match cat {
        MistakeCategory::Object => Some(Slot::Obj),
        MistakeCategory::Action => Some(Slot::Action),
        MistakeCategory::Attribute => Some(Slot::Attr),
        MistakeCategory::Preposition => Some(Slot::Rel),
        _ => None,
    };
    let picked: Vec<&str> = words
        .clone()
        .filter(|(_, s)| want.is_some() && *s == want)
        .map(|(w, _)| w)
        .collect();
    if picked.is_empty() {
        words.map(|(w, _)| w).collect::<Vec<_>>().join(" ")
    } else {
        picked.join(" ")
    }
}

fn feedback_sentence(issue: &Issue) -> String {
    use ErrorType::*;
    use MistakeCategory::*;
    let cat = issue.category;
    let kc = key_words(issue.correction.iter().map(|(w, s)| (w.as_str(), Some(*s))), cat);
    let kw = key_words(issue.wrong.iter().map(|(w, s)| (w.as_str(), *s)), cat);
    let all_c = issue
        .correction
        .iter()
        .map(|(w, _)| w.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let all_w = issue
        .wrong
        .iter()
        .map(|(w, _)| w.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let obj = issue.context_obj.as_deref().unwrap_or("thing");
    match (issue.error_type, cat) {
        (Replace, Object) => format!("there is a {kc} , not a {kw} ."),
        (Replace, Action | Attribute) => format!("the {obj} is {kc} , not {kw} ."),
        (Replace, Preposition) => format!("it is {kc} , not {kw} ."),
        (Replace, _) => format!("it should say {all_c} , not {all_w} ."),
        (Missing, Object) => format!("there is also a {kc} ."),
        (Missing, Action | Attribute) => format!("the {obj} is {kc} ."),
        (Missing, Preposition) => format!("it is {kc} something ."),
        (Missing, _) => format!("it is missing {all_c} ."),
        (Remove, Object) => format!("there is no {kw} ."),
        (Remove, Action | Attribute) => format!("the {obj} is not {kw} ."),
        (Remove, Preposition) => format!("it is not {kw} ."),
        (Remove, _) => format!("remove {all_w} ."),
    }
}
