use longalign_core::lm::{
    lm_to_fsa, lm_to_fsa_with, parse_arpa, perplexity, to_arpa, train_biased, train_ngram, BackoffArcs, LmConfig,
    NgramLM,
};
use longalign_core::vocab::{Vocab, BLANK, UNK};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn word(i: usize) -> String {
    format!("w{i}")
}

fn corpus(rng: &mut ChaCha8Rng, v: usize, n: usize) -> Vec<Vec<String>> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..12);
            // Skewed draws so some n-grams repeat and others are unseen.
            (0..len).map(|_| word(rng.gen_range(0..v).min(rng.gen_range(0..v)))).collect()
        })
        .collect()
}

fn model_vocab(lm: &NgramLM) -> Vocab {
    let mut toks = vec![BLANK.to_string(), UNK.to_string()];
    toks.extend(lm.vocab().iter().filter(|t| t.as_str() != UNK).cloned());
    Vocab::from_tokens(toks).unwrap()
}

#[test]
fn uniform_perplexity_equals_vocabulary_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in [1usize, 2, 3, 4, 5, 7, 8, 10, 16, 100, 256, 1000] {
        let toks: Vec<String> = (0..v).map(word).collect();
        let lm = NgramLM::uniform(&toks).unwrap();
        let seq: Vec<&String> = (0..rng.gen_range(1..50)).map(|_| &toks[rng.gen_range(0..v)]).collect();
        let ppl = perplexity(&lm, &seq).unwrap();
        assert!((ppl - v as f64).abs() <= 1e-9 * v as f64, "V={v}: {ppl}");
    }
}

#[test]
fn expanded_graph_scores_equal_model_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for order in [1, 2, 3, 4] {
        let train = corpus(&mut rng, 12, 40);
        let lm = train_ngram(&train, order).unwrap();
        let vocab = model_vocab(&lm);
        let fsa = lm_to_fsa(&lm, &vocab);
        for _ in 0..40 {
            let seq: Vec<String> = (0..rng.gen_range(1..15)).map(|_| word(rng.gen_range(0..12))).collect();
            let ids = vocab.encode(&seq);
            let path = fsa.best_path_score(&ids).unwrap().expect("every token has an arc");
            let model = lm.score(&seq);
            assert!((path - model).abs() < 1e-6, "order {order}: {path} vs {model}");
            checked += 1;
        }
    }
    assert!(checked >= 100);
}

#[test]
fn epsilon_graph_upper_bounds_model_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let train = corpus(&mut rng, 10, 50);
    let lm = train_ngram(&train, 3).unwrap();
    let vocab = model_vocab(&lm);
    let fsa = lm_to_fsa_with(&lm, &vocab, BackoffArcs::Epsilon);
    for _ in 0..100 {
        let seq: Vec<String> = (0..rng.gen_range(1..10)).map(|_| word(rng.gen_range(0..10))).collect();
        let path = fsa.best_path_score(&vocab.encode(&seq)).unwrap().unwrap();
        assert!(path >= lm.score(&seq) - 1e-9);
    }
}

#[test]
fn conditional_distributions_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let doc = corpus(&mut rng, 8, 10);
    let bg = corpus(&mut rng, 15, 60);
    let lm = train_biased(&doc, &bg, &LmConfig::default()).unwrap();
    let n = lm.vocab().len() as u32;
    for _ in 0..200 {
        let hist: Vec<u32> = (0..rng.gen_range(0..3)).map(|_| rng.gen_range(0..n)).collect();
        let total: f64 = (0..n).map(|w| lm.log_prob_ids(&hist, w).exp()).sum();
        assert!((total - 1.0).abs() < 1e-9, "{hist:?}: {total}");
    }
}

#[test]
fn biasing_raises_document_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let doc = corpus(&mut rng, 6, 20);
    let bg: Vec<Vec<String>> = corpus(&mut rng, 30, 200)
        .into_iter()
        .map(|s| s.into_iter().map(|w| format!("b{w}")).collect())
        .collect();
    let strong = train_biased(&doc, &bg, &LmConfig { bias_lambda: 0.9, ..LmConfig::default() }).unwrap();
    let weak = train_biased(&doc, &bg, &LmConfig { bias_lambda: 0.1, ..LmConfig::default() }).unwrap();
    // Scored per sentence: joining sentences creates n-grams neither model saw.
    let total = |lm: &NgramLM| doc.iter().map(|s| lm.score(s)).sum::<f64>();
    assert!(total(&strong) > total(&weak));
}

#[test]
fn arpa_round_trip_preserves_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lm = train_ngram(&corpus(&mut rng, 10, 30), 3).unwrap();
    let back = parse_arpa(&to_arpa(&lm)).unwrap();
    assert_eq!(back.order(), lm.order());
    for _ in 0..100 {
        let seq: Vec<String> = (0..rng.gen_range(1..10)).map(|_| word(rng.gen_range(0..10))).collect();
        assert!((back.score(&seq) - lm.score(&seq)).abs() < 1e-4 * seq.len() as f64);
    }
}
