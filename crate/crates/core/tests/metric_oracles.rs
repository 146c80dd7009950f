//! Brute-force BLEU and ROUGE-L oracles compared against the library.

use feedcap::rewards::{bleu_n, rouge_l, sentence_reward, Quality, Reference, RewardConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "support/metric_oracle.rs"]
mod metric_oracle;

use metric_oracle::{oracle_bleu, oracle_rouge};

const VOCAB: [&str; 12] = [
    "a", "the", "red", "cat", "dog", "is", "sitting", "on", "mat", "next", "to", "and",
];

fn random_sentence(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let n = rng.random_range(1..12);
    (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect()
}

#[test]
fn bleu_and_rouge_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let c = random_sentence(&mut rng);
        let refs: Vec<Vec<&str>> = (0..rng.random_range(1..4)).map(|_| random_sentence(&mut rng)).collect();
        for n in 1..=5 {
            let got = bleu_n(&c, &refs, n).unwrap();
            let want = oracle_bleu(&c, &refs, n);
            assert!((got - want).abs() <= 1e-12, "n={n} {got} vs {want}");
        }
        let got = rouge_l(&c, &refs).unwrap();
        assert!((got - oracle_rouge(&c, &refs)).abs() <= 1e-12);
    }
}

#[test]
fn worked_bigram_example() {
    let c = ["a", "cat", "on", "a", "mat"];
    let r = vec!["a", "cat", "sat", "on", "a", "mat"];
    // unigrams 5/5; bigrams (a cat, cat on, on a, a mat) 3 matched of 4 → (3+1)/(4+1)
    let want = (1.0f64 * 0.8).sqrt() * (1.0f64 - 6.0 / 5.0).exp();
    assert!((bleu_n(&c, &[r.clone()], 2).unwrap() - want).abs() < 1e-12);
    assert!((oracle_bleu(&c, &[r], 2) - want).abs() < 1e-12);
}

#[test]
fn sentence_reward_composes_from_oracle() {
    let cfg = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let c = random_sentence(&mut rng);
        let r = random_sentence(&mut rng);
        let want: f64 = (1..=5)
            .map(|i| cfg.lambdas[i - 1] * oracle_bleu(&c, &[r.clone()], i))
            .sum::<f64>()
            * 0.6;
        let rt: Vec<String> = r.iter().map(|s| s.to_string()).collect();
        let got = sentence_reward(&c, &Reference::new(rt, Quality::GrammarOnly), &cfg);
        assert!((got - want).abs() < 1e-12);
    }
}
