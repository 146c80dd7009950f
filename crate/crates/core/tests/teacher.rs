use feedcap::corpus::{gen_scene, realize_caption, Grammar, Phrase, PhraseLabel, PhrasedCaption, Scene, SceneConfig};
use feedcap::feedback::{
    apply_correction, load_snapshot, save_snapshot, store_stats, ErrorType, FeedbackRecord, FeedbackStore,
    MistakeCategory, Provenance, Rating, RoundEntry, SnapshotCaption, Span, StoreFilter, Teacher, TeacherConfig,
};
use feedcap::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn teacher() -> Teacher {
    Teacher::new(
        Grammar::default(),
        TeacherConfig {
            vague_prob: 0.0,
            ..TeacherConfig::default()
        },
    )
}

/// Scene whose subject is a dog with a known layout.
fn dog_scene() -> (Scene, PhrasedCaption) {
    let g = Grammar::default();
    let cfg = SceneConfig::default();
    for seed in 0.. {
        let s = gen_scene(seed, &cfg).unwrap();
        if s.subject_cell().object == 1 && s.subject_cell().action.is_none() && s.landmark_cell().action.is_none() {
            let cap = g.caption(&s, feedcap::corpus::LandmarkDet::A).unwrap();
            return (s, cap);
        }
    }
    unreachable!()
}

fn with_word(c: &PhrasedCaption, p: usize, k: usize, w: &str) -> PhrasedCaption {
    let mut c = c.clone();
    c.phrases[p].words[k] = w.to_string();
    c
}

#[test]
fn truthful_captions_are_perfect() {
    let t = teacher();
    let cfg = SceneConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seed in 0..200 {
        let s = gen_scene(seed, &cfg).unwrap();
        let c = realize_caption(&s, &t.grammar, seed).unwrap();
        assert_eq!(t.rate(&s, &c).unwrap(), Rating::Perfect);
        assert!(t.critique(&s, &c, &mut rng).unwrap().is_none());
    }
}

#[test]
fn object_swap_is_major_with_figure_style_feedback() {
    let t = teacher();
    let (s, cap) = dog_scene();
    assert_eq!(cap.phrases[0].words[2], "dog");
    let wrong = with_word(&cap, 0, 2, "cat");
    assert_eq!(t.rate(&s, &wrong).unwrap(), Rating::Major);
    let e = t
        .critique(&s, &wrong, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap()
        .unwrap();
    assert_eq!(e.error_type, ErrorType::Replace);
    assert_eq!(e.feedback_text, "there is a dog , not a cat .");
    assert_eq!(e.mistake_category, MistakeCategory::Object);
    assert_eq!(
        e.span,
        Span {
            phrase_index: 0,
            word_start: 2,
            word_end: 3
        }
    );
    assert_eq!(e.correction, vec!["dog".to_string()]);
    assert_eq!(e.post_quality, Rating::Perfect);
    assert_eq!(apply_correction(&wrong, &e).unwrap(), cap);
}

#[test]
fn attribute_errors() {
    let t = teacher();
    let (s, cap) = dog_scene();
    let attr = &cap.phrases[0].words[1];
    let other = if attr == "red" { "blue" } else { "red" };
    assert_eq!(t.rate(&s, &with_word(&cap, 0, 1, other)).unwrap(), Rating::Minor);
    let mut missing = cap.clone();
    missing.phrases[0].words.remove(1);
    assert_eq!(t.rate(&s, &missing).unwrap(), Rating::Acceptable);
    let mut bad_det = cap.clone();
    bad_det.phrases[0].words[0] = "the".into();
    assert_eq!(t.rate(&s, &bad_det).unwrap(), Rating::GrammarOnly);
}

#[test]
fn hallucinated_phrase_is_removed() {
    let t = teacher();
    let (s, cap) = dog_scene();
    let land = &cap.phrases.last().unwrap().words;
    let extra_obj = if land.last().unwrap() == "mat" { "box" } else { "mat" };
    let mut c = cap.clone();
    c.phrases.push(Phrase::new(PhraseLabel::PP, &["under", "a", extra_obj]));
    let e = t.critique(&s, &c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().unwrap();
    assert_eq!(e.error_type, ErrorType::Remove);
    assert_eq!(e.mistake_category, MistakeCategory::Object);
    assert_eq!(e.feedback_text, format!("there is no {extra_obj} ."));
    assert_eq!(
        e.span,
        Span {
            phrase_index: c.len() - 1,
            word_start: 0,
            word_end: 3
        }
    );
    assert!(e.correction.is_empty());
    assert_eq!(apply_correction(&c, &e).unwrap(), cap);
}

#[test]
fn missing_phrase_is_inserted() {
    let t = teacher();
    let (s, cap) = dog_scene();
    let mut c = cap.clone();
    c.phrases.pop();
    let e = t.critique(&s, &c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().unwrap();
    assert_eq!(e.error_type, ErrorType::Missing);
    assert_eq!(e.correction_label, Some(PhraseLabel::PP));
    let fixed = apply_correction(&c, &e).unwrap();
    assert!(t.grammar.variants(&s).unwrap().contains(&fixed));
}

#[test]
fn scripted_records_validate_and_each_round_improves() {
    let t = Teacher::new(Grammar::default(), TeacherConfig::default());
    let cfg = SceneConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut resolved = 0;
    for seed in 0..400 {
        let s = gen_scene(seed, &cfg).unwrap();
        let c = t.corrupt_caption(&s, &mut rng).unwrap();
        let rec = t.teach(&s, &c, &mut rng).unwrap();
        rec.validate().unwrap();
        let chain = rec.caption_chain().unwrap();
        for (k, r) in rec.rounds.iter().enumerate() {
            let before = t.score(&s, &chain[k]).unwrap();
            let after = t.score(&s, &chain[k + 1]).unwrap();
            assert!(after < before, "{before:?} -> {after:?} on {}", chain[k]);
            assert_eq!(t.rate(&s, &chain[k + 1]).unwrap(), r.post_quality);
        }
        assert!(rec.rounds.len() <= 3);
        if !rec.final_quality().needs_feedback() {
            resolved += 1;
        }
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(serde_json::from_str::<FeedbackRecord>(&json).unwrap(), rec);
    }
    assert!(resolved > 300, "{resolved}");
}

fn sample_record(rounds: usize) -> FeedbackRecord {
    let (s, cap) = dog_scene();
    let mut c = with_word(&cap, 0, 2, "cat");
    if rounds == 2 {
        let last = c.len() - 1;
        let k = c.phrases[last].words.len() - 1;
        let other = if c.phrases[last].words[k] == "box" {
            "car"
        } else {
            "box"
        };
        c = with_word(&c, last, k, other);
    }
    let rec = teacher().teach(&s, &c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(rec.rounds.len(), rounds);
    rec
}

#[test]
fn store_round_trip_filters_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let store = FeedbackStore::new(dir.path().join("feedback.jsonl"));
    assert!(store.load(StoreFilter::default()).unwrap().is_empty());
    let two = sample_record(2);
    let mut other = sample_record(1);
    other.image_id += 1;
    other.provenance = Provenance::Human;
    store.append(&two).unwrap();
    store.append(&other).unwrap();
    let all = store.load(StoreFilter::default()).unwrap();
    assert_eq!(all, vec![two.clone(), other.clone()]);
    assert_eq!(store.load(StoreFilter::default()).unwrap(), all);
    let only = store
        .load(StoreFilter {
            image_id: Some(two.image_id),
            ..Default::default()
        })
        .unwrap();
    assert_eq!(only, vec![two.clone()]);
    let human = store
        .load(StoreFilter {
            provenance: Some(Provenance::Human),
            ..Default::default()
        })
        .unwrap();
    assert_eq!(human, vec![other]);
    assert_eq!(store_stats(&only).avg_rounds, 2.0);
}

#[test]
fn span_crossing_phrase_boundary_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = FeedbackStore::new(dir.path().join("f.jsonl"));
    let mut rec = sample_record(1);
    let len = rec.caption.phrases[0].words.len();
    rec.rounds[0].span.word_end = len + 1;
    match store.append(&rec) {
        Err(Error::Validation { path, .. }) => assert_eq!(path, "rounds[0].span.word_end"),
        other => panic!("{other:?}"),
    }
    assert!(store.load(StoreFilter::default()).unwrap().is_empty());
}

#[test]
fn rounds_required_exactly_for_erroneous_ratings() {
    let mut rec = sample_record(1);
    rec.quality = Rating::Perfect;
    assert!(matches!(rec.validate(), Err(Error::Validation { .. })));
    let mut rec = sample_record(1);
    rec.rounds.clear();
    assert!(matches!(rec.validate(), Err(Error::Validation { .. })));
}

#[test]
fn round_entry_validation() {
    let cap = PhrasedCaption::new(vec![Phrase::new(PhraseLabel::NP, &["a", "cat"])]);
    let base = RoundEntry {
        error_type: ErrorType::Replace,
        feedback_text: "there is a dog , not a cat .".into(),
        mistake_category: MistakeCategory::Object,
        span: Span {
            phrase_index: 0,
            word_start: 1,
            word_end: 2,
        },
        correction: vec!["dog".into()],
        correction_label: None,
        post_quality: Rating::Perfect,
    };
    assert!(feedcap::feedback::validate_round(&cap, &base, "r").is_ok());
    let mut e = base.clone();
    e.span.word_start = 2;
    e.span.word_end = 1;
    assert!(feedcap::feedback::validate_round(&cap, &e, "r").is_err());
    let mut e = base.clone();
    e.correction.clear();
    assert!(feedcap::feedback::validate_round(&cap, &e, "r").is_err());
    let mut e = base;
    e.span.phrase_index = 3;
    assert!(feedcap::feedback::validate_round(&cap, &e, "r").is_err());
}

#[test]
fn snapshot_round_trip_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snapshot.jsonl");
    let (_, caption) = dog_scene();
    let items = vec![SnapshotCaption::new(3, &caption), SnapshotCaption::new(9, &caption)];
    save_snapshot(&items, &path).unwrap();
    assert_eq!(load_snapshot(&path).unwrap(), items);
    let first = std::fs::read_to_string(&path).unwrap();
    let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(line["image_id"], 3);
    assert!(line["phrases"].is_array());

    let dup = vec![items[0].clone(), items[0].clone()];
    assert!(matches!(save_snapshot(&dup, &path), Err(Error::Validation { .. })));
    std::fs::write(
        &path,
        "{\"image_id\":1,\"phrases\":[{\"label\":\"NP\",\"words\":[]}]}\n",
    )
    .unwrap();
    match load_snapshot(&path) {
        Err(Error::Validation { path, .. }) => assert_eq!(path, "[0].phrases[0].words"),
        other => panic!("{other:?}"),
    }
}
