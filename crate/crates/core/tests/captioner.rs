use feedcap::captioner::{
    pretrain, scene_batch, Captioner, CaptionerConfig, DecodeLimits, EncodedCaption, Policy, PretrainConfig,
};
use feedcap::corpus::{
    build_vocab, gen_dataset, gen_scene, realize_caption, scene_features, FeatureGrid, Grammar, Phrase, PhraseLabel,
    PhrasedCaption, SceneConfig, Vocabulary,
};
use feedcap::numerics::{grad_check_report, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> CaptionerConfig {
    CaptionerConfig {
        phrase_hidden: 16,
        word_hidden: 16,
        word_embed: 8,
        label_embed: 4,
        att_hidden: 8,
        mlp_hidden: 16,
        phrase_code: 8,
        deep_out: 16,
        ..CaptionerConfig::default()
    }
}

fn setup(cfg: &CaptionerConfig, seed: u64) -> (Captioner, FeatureGrid, PhrasedCaption) {
    let scfg = SceneConfig::default();
    let grammar = Grammar::default();
    let vocab = Vocabulary::from_words(grammar.terminals());
    let scene = gen_scene(seed, &scfg).unwrap();
    let feats = scene_features(&scene, &scfg, 1).unwrap();
    let cap = realize_caption(&scene, &grammar, seed).unwrap();
    (Captioner::new(cfg, vocab, seed).unwrap(), feats, cap)
}

#[test]
fn zero_params_give_uniform_predictions_and_closed_form_loss() {
    let cfg = small_config();
    let (mut c, feats, cap) = setup(&cfg, 3);
    c.store.zero_all();
    let gold = EncodedCaption::encode(&cap, &c.vocab);
    let mut tape = Tape::new(&c.store);
    let trace = c.model.decode(&mut tape, &feats, &mut Policy::Teacher(&gold)).unwrap();
    for p in &trace.phrases {
        for &a in tape.value(p.alpha_phrase).iter().chain(tape.value(p.alpha_word)) {
            assert!((a - 1.0 / feats.n as f64).abs() < 1e-15);
        }
        assert!((p.label_logp + 5f64.ln()).abs() < 1e-12);
        for lp in &p.word_logps {
            assert!((lp + (c.vocab.len() as f64).ln()).abs() < 1e-12);
        }
    }
    let n_l = (cap.len() + 1) as f64;
    let n_w = (cap.word_count() + cap.len()) as f64;
    let n = feats.n as f64;
    let pen = cfg.lambda_att * 2.0 * n * (1.0 - cap.len() as f64 / n).powi(2);
    let want = n_w * (c.vocab.len() as f64).ln() + n_l * 5f64.ln() + pen;
    let got = c.mle_loss_value(&feats, &cap).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn zeroed_output_heads_alone_give_uniform_distributions() {
    let (mut c, feats, _) = setup(&small_config(), 4);
    for head in c.model.output_heads() {
        c.store.get_mut(head.w).fill(0.0);
        c.store.get_mut(head.b).fill(0.0);
    }
    let mut tape = Tape::new(&c.store);
    let trace = c.model.decode(&mut tape, &feats, &mut Policy::Greedy).unwrap();
    for p in &trace.phrases {
        assert!((p.label_logp + 5f64.ln()).abs() < 1e-12);
        for lp in &p.word_logps {
            assert!((lp + (c.vocab.len() as f64).ln()).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_normalized_and_decoding_halts() {
    let cfg = CaptionerConfig {
        limits: DecodeLimits {
            max_phrases: 4,
            max_words: 3,
        },
        ..small_config()
    };
    let (c, feats, _) = setup(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let mut tape = Tape::new(&c.store);
        let trace = c
            .model
            .decode(
                &mut tape,
                &feats,
                &mut Policy::Sample {
                    rng: &mut rng,
                    temperature: 2.0,
                },
            )
            .unwrap();
        assert!(trace.phrases.len() <= 4);
        for p in &trace.phrases {
            assert!(p.words.len() <= 3);
            for a in [p.alpha_phrase, p.alpha_word] {
                let s: f64 = tape.value(a).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            let pe = tape.value(p.label_logits).to_vec();
            assert!(pe.iter().all(|x| x.is_finite()));
        }
    }
}

#[test]
fn sampled_log_prob_matches_recomputation() {
    let (c, feats, _) = setup(&small_config(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let s = c.sample(&feats, &mut rng, 1.0).unwrap();
        let sum: f64 = s.step_logps.iter().sum();
        assert!((sum - s.log_prob).abs() < 1e-10);
        let again = c.log_prob(&feats, &s.encoded).unwrap();
        assert!((again - s.log_prob).abs() < 1e-10, "{again} vs {}", s.log_prob);
    }
}

#[test]
fn temperature_zero_is_greedy_and_greedy_is_deterministic() {
    let (c, feats, _) = setup(&small_config(), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = c.greedy(&feats).unwrap();
    assert_eq!(c.greedy(&feats).unwrap(), g);
    assert_eq!(c.sample(&feats, &mut rng, 0.0).unwrap().caption, g);
}

#[test]
fn full_model_gradient_check_at_reduced_dims() {
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
        ..CaptionerConfig::default()
    };
    let cap = PhrasedCaption::new(vec![
        Phrase::new(PhraseLabel::NP, &["a", "red", "cat"]),
        Phrase::new(PhraseLabel::VP, &["is", "sitting"]),
        Phrase::new(PhraseLabel::PP, &["on", "a", "mat"]),
    ]);
    let vocab = build_vocab([&cap]).unwrap();
    let vocab = Vocabulary::from_words(
        vocab.words()[3..]
            .iter()
            .chain(["dog".to_string(), "the".to_string()].iter()),
    );
    assert_eq!(vocab.len(), 12);
    let c = Captioner::new(&cfg, vocab, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values: Vec<f64> = (0..4 * 6)
        .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
        .collect();
    let feats = FeatureGrid { n: 4, dim: 6, values };
    let gold = EncodedCaption::encode(&cap, &c.vocab);
    let rep = grad_check_report(&c.store, 1e-4, |tape| c.model.mle_loss(tape, &feats, &gold)).unwrap();
    let err = rep.max_rel_error;
    assert!(err < 1e-4, "{rep:?}");
}

#[test]
fn single_example_overfits() {
    let (mut c, feats, cap) = setup(&small_config(), 8);
    let before = c.mle_loss_value(&feats, &cap).unwrap();
    let items = vec![feedcap::captioner::TrainItem {
        scene: 0,
        gold: EncodedCaption::encode(&cap, &c.vocab),
    }];
    let out = pretrain(
        &mut c,
        std::slice::from_ref(&feats),
        &items,
        &PretrainConfig {
            epochs: 50,
            batch: 1,
            lr: 3e-3,
            seed: 0,
        },
    )
    .unwrap();
    let after = c.mle_loss_value(&feats, &cap).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");
    let first_half: f64 = out.log[..25].iter().map(|e| e.loss).sum();
    let second_half: f64 = out.log[25..].iter().map(|e| e.loss).sum();
    assert!(second_half < first_half);
}

#[test]
fn pretrain_is_reproducible_and_checkpoint_round_trips() {
    let scfg = SceneConfig::default();
    let grammar = Grammar::default();
    let ds = gen_dataset(12, 4, 1, &scfg, &grammar).unwrap();
    let vocab = Vocabulary::from_words(grammar.terminals());
    let run = || {
        let mut c = Captioner::new(&small_config(), vocab.clone(), 1).unwrap();
        let (feats, items) = scene_batch(&ds, &c, &scfg, 0).unwrap();
        let cfg = PretrainConfig {
            epochs: 3,
            batch: 4,
            ..PretrainConfig::default()
        };
        let log = pretrain(&mut c, &feats, &items, &cfg).unwrap().log;
        (c, feats, log)
    };
    let (a, feats, la) = run();
    let (_, _, lb) = run();
    assert_eq!(la, lb);
    assert!(la[2].loss < la[0].loss);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cap.json");
    a.save(&p, Some("abc".into())).unwrap();
    let (b, h) = Captioner::load(&p).unwrap();
    assert_eq!(h.as_deref(), Some("abc"));
    for f in &feats {
        assert_eq!(a.greedy(f).unwrap(), b.greedy(f).unwrap());
    }
}

#[test]
fn feature_dim_mismatch_is_shape_error() {
    let (c, _, _) = setup(&small_config(), 1);
    let f = FeatureGrid {
        n: 2,
        dim: 5,
        values: vec![0.0; 10],
    };
    assert!(matches!(c.greedy(&f), Err(feedcap::Error::Shape { .. })));
}
