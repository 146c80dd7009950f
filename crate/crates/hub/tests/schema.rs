use feedcap::corpus::Grammar;
use feedcap::corpus::{gen_scene, PhraseLabel, SceneConfig};
use feedcap::feedback::{
    ErrorType, FeedbackRecord, MistakeCategory, Provenance, Rating, SnapshotCaption, Teacher, TeacherConfig,
};
use feedcap_hub::{TaskView, FEEDBACK_SCHEMA};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn schema() -> Value {
    serde_json::from_str(FEEDBACK_SCHEMA).unwrap()
}

fn validator(def: &str) -> jsonschema::Validator {
    let mut s = schema();
    s["$ref"] = json!(format!("#/$defs/{def}"));
    jsonschema::validator_for(&s).unwrap()
}

fn enum_names(def: &str) -> Vec<Value> {
    schema()["$defs"][def]["enum"].as_array().unwrap().clone()
}

fn serialized<T: serde::Serialize>(xs: &[T]) -> Vec<Value> {
    xs.iter().map(|x| serde_json::to_value(x).unwrap()).collect()
}

#[test]
fn schema_enums_match_the_serialized_types() {
    assert_eq!(enum_names("Rating"), serialized(&Rating::ALL));
    assert_eq!(enum_names("MistakeCategory"), serialized(&MistakeCategory::ALL));
    assert_eq!(enum_names("PhraseLabel"), serialized(&PhraseLabel::ALL));
    assert_eq!(
        enum_names("ErrorType"),
        serialized(&[ErrorType::Replace, ErrorType::Missing, ErrorType::Remove])
    );
    assert_eq!(
        enum_names("Provenance"),
        serialized(&[Provenance::Human, Provenance::Scripted])
    );
}

#[test]
fn scripted_records_validate_against_the_schema() {
    let teacher = Teacher::new(Grammar::default(), TeacherConfig::default());
    let record = validator("FeedbackRecord");
    let round = validator("RoundEntry");
    let snap = validator("SnapshotCaption");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut with_rounds = 0;
    for seed in 0..300 {
        let scene = gen_scene(seed, &SceneConfig::default()).unwrap();
        let caption = teacher.corrupt_caption(&scene, &mut rng).unwrap();
        let rec = teacher.teach(&scene, &caption, &mut rng).unwrap();
        let v = serde_json::to_value(&rec).unwrap();
        assert!(record.is_valid(&v), "{v}");
        for r in &rec.rounds {
            assert!(round.is_valid(&serde_json::to_value(r).unwrap()));
        }
        with_rounds += usize::from(!rec.rounds.is_empty());
        assert!(snap.is_valid(&serde_json::to_value(SnapshotCaption::new(seed, &caption)).unwrap()));
    }
    assert!(with_rounds > 100);
}

#[test]
fn payloads_the_schema_rejects_do_not_deserialize() {
    let record = validator("FeedbackRecord");
    let good = json!({
        "image_id": 1,
        "caption": {"phrases": [{"label": "NP", "words": ["a", "cat"]}]},
        "quality": "major",
        "rounds": [{
            "error_type": "replace",
            "feedback_text": "there is a dog , not a cat .",
            "mistake_category": "object",
            "span": {"phrase_index": 0, "word_start": 1, "word_end": 2},
            "correction": ["dog"],
            "post_quality": "perfect"
        }],
        "provenance": "human"
    });
    assert!(record.is_valid(&good));
    let parsed: FeedbackRecord = serde_json::from_value(good.clone()).unwrap();
    parsed.validate().unwrap();

    let mut bad = Vec::new();
    let mut v = good.clone();
    v["quality"] = json!("great");
    bad.push(v);
    let mut v = good.clone();
    v["rounds"][0]["span"]["extra"] = json!(0);
    bad.push(v);
    let mut v = good.clone();
    v["rounds"][0].as_object_mut().unwrap().remove("post_quality");
    bad.push(v);
    let mut v = good.clone();
    v["rounds"][0]["span"]["word_start"] = json!(-1);
    bad.push(v);
    let mut v = good.clone();
    v["rounds"][0]["mistake_category"] = json!("colour");
    bad.push(v);
    let mut v = good;
    v["source"] = json!("amt");
    bad.push(v);
    for v in bad {
        assert!(!record.is_valid(&v), "{v}");
        assert!(serde_json::from_value::<FeedbackRecord>(v).is_err());
    }
}

#[test]
fn task_views_validate_against_the_schema() {
    let view = TaskView {
        task_id: 3,
        image_id: 17,
        round: 2,
        caption: feedcap::corpus::PhrasedCaption::new(vec![feedcap::corpus::Phrase::new(
            PhraseLabel::NP,
            &["a", "cat"],
        )]),
        rendered: "( a cat )".into(),
        rounds_done: 1,
        lease_seconds: 600,
    };
    let v = serde_json::to_value(&view).unwrap();
    assert!(validator("TaskView").is_valid(&v));
    let mut bad = v;
    bad["round"] = json!(3);
    assert!(!validator("TaskView").is_valid(&bad));
    assert!(validator("Round1Submission").is_valid(&json!({"quality": "acceptable"})));
    assert!(!validator("Round1Submission").is_valid(&json!({"quality": "acceptable", "x": 1})));
}
