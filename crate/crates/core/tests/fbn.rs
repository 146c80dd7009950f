use feedcap::corpus::{Phrase, PhraseLabel, PhrasedCaption};
use feedcap::fbn::*;
use feedcap::feedback::{ErrorType, FeedbackRecord, MistakeCategory, Provenance, Rating, RoundEntry, Span};
use feedcap::numerics::{dropout_mask, grad_check, Tape};
use feedcap::rewards::{FeedbackClass, RewardConfig};
use feedcap::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cat_caption() -> PhrasedCaption {
    PhrasedCaption::new(vec![
        Phrase::new(PhraseLabel::NP, &["a", "small", "cat"]),
        Phrase::new(PhraseLabel::VP, &["sitting"]),
        Phrase::new(PhraseLabel::PP, &["near"]),
        Phrase::new(PhraseLabel::NP, &["a", "tree"]),
    ])
}

fn object_round(from: &str, to: &str, word: usize, post: Rating) -> RoundEntry {
    RoundEntry {
        error_type: ErrorType::Replace,
        feedback_text: format!("there is a {to} , not a {from} ."),
        mistake_category: MistakeCategory::Object,
        span: Span {
            phrase_index: 0,
            word_start: word,
            word_end: word + 1,
        },
        correction: vec![to.to_string()],
        correction_label: None,
        post_quality: post,
    }
}

fn record(rounds: Vec<RoundEntry>) -> FeedbackRecord {
    FeedbackRecord {
        image_id: 7,
        caption: cat_caption(),
        quality: Rating::Major,
        rounds,
        provenance: Provenance::Scripted,
    }
}

fn counts(ex: &[FbnExample]) -> [usize; 3] {
    let mut c = [0; 3];
    for e in ex {
        c[e.label.index()] += 1;
    }
    c
}

#[test]
fn one_round_over_four_phrases_labels_eight_examples() {
    let ex = build_fbn_dataset(&[record(vec![object_round("cat", "dog", 2, Rating::Perfect)])]).unwrap();
    assert_eq!(ex.len(), 8);
    assert_eq!(counts(&ex), [1, 1, 6]);
    let wrong = ex.iter().find(|e| e.label == FeedbackClass::Wrong).unwrap();
    assert_eq!(wrong.caption[0].words, vec!["a", "small", "cat"]);
    assert_eq!(wrong.phrase_index, 0);
    let correct = ex.iter().find(|e| e.label == FeedbackClass::Correct).unwrap();
    assert_eq!(correct.caption[0].words, vec!["a", "small", "dog"]);
    assert_eq!(correct.feedback, "there is a dog , not a cat .");
    assert_eq!(correct.mistake_type, Some(MistakeCategory::Object));
}

#[test]
fn two_rounds_double_the_examples() {
    let mut second = object_round("small", "large", 1, Rating::Perfect);
    second.mistake_category = MistakeCategory::Attribute;
    second.feedback_text = "the dog is large .".into();
    let rec = record(vec![object_round("cat", "dog", 2, Rating::Minor), second]);
    let ex = build_fbn_dataset(&[rec]).unwrap();
    assert_eq!(ex.len(), 16);
    assert_eq!(counts(&ex), [2, 2, 12]);
    let last = ex.iter().filter(|e| e.label == FeedbackClass::Correct).last().unwrap();
    assert_eq!(last.caption[0].words, vec!["a", "large", "dog"]);
}

#[test]
fn inserted_and_removed_phrases_have_one_sided_labels() {
    let insert = RoundEntry {
        error_type: ErrorType::Missing,
        feedback_text: "the cat is under a tree .".into(),
        mistake_category: MistakeCategory::Preposition,
        span: Span {
            phrase_index: 2,
            word_start: 0,
            word_end: 0,
        },
        correction: vec!["under".into()],
        correction_label: Some(PhraseLabel::PP),
        post_quality: Rating::Perfect,
    };
    let ex = build_fbn_dataset(&[record(vec![insert])]).unwrap();
    assert_eq!(ex.len(), 4 + 5);
    assert_eq!(counts(&ex), [1, 0, 8]);

    let remove = RoundEntry {
        error_type: ErrorType::Remove,
        feedback_text: "there is no sitting .".into(),
        mistake_category: MistakeCategory::Action,
        span: Span {
            phrase_index: 1,
            word_start: 0,
            word_end: 1,
        },
        correction: vec![],
        correction_label: None,
        post_quality: Rating::Perfect,
    };
    let ex = build_fbn_dataset(&[record(vec![remove])]).unwrap();
    assert_eq!(ex.len(), 4 + 3);
    assert_eq!(counts(&ex), [0, 1, 6]);
}

#[test]
fn invalid_record_error_names_the_record() {
    let mut r = object_round("cat", "dog", 2, Rating::Perfect);
    r.span.word_end = 9;
    let mut ok = record(vec![]);
    ok.quality = Rating::Perfect;
    let err = build_fbn_dataset(&[ok, record(vec![r])]).unwrap_err();
    match err {
        Error::Validation { path, .. } => assert!(path.starts_with("records[1] (image 7)"), "{path}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn dataset_jsonl_round_trip() {
    let ex = build_fbn_dataset(&[record(vec![object_round("cat", "dog", 2, Rating::Perfect)])]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("fbn.jsonl");
    save_fbn_dataset(&ex, &p).unwrap();
    assert_eq!(load_fbn_dataset(&p).unwrap(), ex);
}

/// A small dataset where the feedback names the object of the wrong phrase.
fn toy_examples() -> Vec<FbnExample> {
    let animals = ["cat", "dog", "horse", "bird"];
    let mut recs = Vec::new();
    for (i, a) in animals.iter().enumerate() {
        for b in animals.iter().filter(|b| *b != a) {
            let mut r = record(vec![object_round(a, b, 2, Rating::Perfect)]);
            r.caption.phrases[0].words[2] = a.to_string();
            r.image_id = i as u64;
            recs.push(r);
        }
    }
    build_fbn_dataset(&recs).unwrap()
}

fn small_cfg() -> FbnConfig {
    FbnConfig {
        embed: 6,
        hidden: 5,
        phrase: 4,
        mlp_hidden: 7,
        dropout: 0.3,
    }
}

#[test]
fn empty_feedback_is_rejected() {
    let fbn = Fbn::new(&small_cfg(), fbn_vocab(&toy_examples()), 0).unwrap();
    assert!(matches!(
        fbn.forward(&cat_caption(), "  ", 0, None),
        Err(Error::Contract(_))
    ));
    let mut ex = toy_examples();
    ex[0].feedback = String::new();
    assert!(matches!(fbn.group(&ex, false), Err(Error::Contract(_))));
    assert!(matches!(
        fbn.forward(&cat_caption(), "no cat", 4, None),
        Err(Error::Contract(_))
    ));
}

#[test]
fn single_class_data_is_a_config_error() {
    let ex: Vec<_> = toy_examples()
        .into_iter()
        .filter(|e| e.label == FeedbackClass::NotRelevant)
        .collect();
    let err = train_fbn(&ex, &small_cfg(), &FbnTrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn empty_evaluation_is_an_error() {
    let fbn = Fbn::new(&small_cfg(), fbn_vocab(&toy_examples()), 0).unwrap();
    assert!(eval_fbn(&fbn, &[]).is_err());
}

#[test]
fn probabilities_are_distributions() {
    let fbn = Fbn::new(&small_cfg(), fbn_vocab(&toy_examples()), 3).unwrap();
    let probs = fbn
        .caption_probs(
            &cat_caption(),
            "there is a dog , not a cat .",
            Some(MistakeCategory::Object),
        )
        .unwrap();
    assert_eq!(probs.len(), 4);
    for p in probs {
        assert!(p.iter().all(|&x| x > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic_and_fits_a_toy_task() {
    let ex = toy_examples();
    let cfg = FbnTrainConfig {
        epochs: 300,
        lr: 3e-3,
        batch: 16,
        test_fraction: 0.0,
        ..FbnTrainConfig::default()
    };
    let model = FbnConfig {
        embed: 12,
        hidden: 16,
        phrase: 12,
        mlp_hidden: 64,
        dropout: 0.0,
    };
    let (a, ra) = train_fbn(&ex, &model, &cfg).unwrap();
    let (b, rb) = train_fbn(&ex, &model, &cfg).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.store.to_checkpoint(), b.store.to_checkpoint());
    assert!(ra.test.accuracy > 0.95, "{:?}", ra.test);
    assert!(ra.test.accuracy > ra.majority_baseline);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("fbn.json");
    a.save(&p).unwrap();
    let back = Fbn::load(&p).unwrap();
    let fb = "there is a dog , not a cat .";
    let m = Some(MistakeCategory::Object);
    assert_eq!(
        back.caption_probs(&cat_caption(), fb, m).unwrap(),
        a.caption_probs(&cat_caption(), fb, m).unwrap()
    );
    assert_eq!(a.classify(&cat_caption(), fb, m).unwrap()[0], FeedbackClass::Wrong);
}

#[test]
fn phrase_scores_sum_class_values() {
    let ex = toy_examples();
    let fbn = Fbn::new(&small_cfg(), fbn_vocab(&ex), 1).unwrap();
    let cfg = RewardConfig::default();
    let fb = vec![
        (
            "there is a dog , not a cat .".to_string(),
            Some(MistakeCategory::Object),
        ),
        ("there is a bird , not a cat .".to_string(), None),
    ];
    let scores = fbn.phrase_scores(&cat_caption(), &fb, &cfg).unwrap();
    let mut expect = vec![0.0; 4];
    for (text, m) in &fb {
        for (i, c) in fbn.classify(&cat_caption(), text, *m).unwrap().into_iter().enumerate() {
            expect[i] += cfg.class_values[c.index()];
        }
    }
    assert_eq!(scores, expect);
}

#[test]
fn group_loss_gradient_check_with_fixed_dropout() {
    let ex = toy_examples();
    let fbn = Fbn::new(&small_cfg(), fbn_vocab(&ex), 5).unwrap();
    let groups = fbn.group(&ex[..16], false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let masks: Vec<Vec<f64>> = (0..64).map(|_| dropout_mask(&mut rng, 7, 0.3)).collect();
    let err = grad_check(&fbn.store, 1e-5, |tape: &mut Tape| {
        let mut k = 0;
        let mut terms = Vec::new();
        for g in &groups {
            let mut mask = |_: usize, dim: usize| {
                k += 1;
                Some(masks[k % masks.len()][..dim].to_vec())
            };
            terms.push(fbn.model.group_loss(tape, g, &mut mask)?);
        }
        Ok(tape.sum_scalars(&terms))
    })
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}
