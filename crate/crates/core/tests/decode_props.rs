mod common;

use longalign_core::decode::{
    build_factor_transducer, build_flexible_graph, flex_align, flex_align_window, window_starts, SentenceStatus,
    WindowConfig,
};
use longalign_core::posterior::PosteriorMatrix;
use longalign_core::vocab::TokenId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sentences(rng: &mut ChaCha8Rng, n: usize, max_len: usize, vocab: usize) -> Vec<Vec<TokenId>> {
    (0..n)
        .map(|_| (0..rng.gen_range(1..=max_len)).map(|_| rng.gen_range(1..vocab) as TokenId).collect())
        .collect()
}

/// One-hot posteriors for the token sequence of `sentences`, with random
/// durations and blank gaps (always a blank between repeated tokens). Returns
/// the matrix and each sentence's half-open frame span.
fn one_hot_render(rng: &mut ChaCha8Rng, sentences: &[Vec<TokenId>], vocab: usize) -> (PosteriorMatrix, Vec<(usize, usize)>) {
    let mut frames: Vec<usize> = Vec::new();
    let mut spans = Vec::new();
    let mut prev: Option<TokenId> = None;
    for _ in 0..rng.gen_range(0..4) {
        frames.push(0);
    }
    for sent in sentences {
        let mut start = None;
        for &tok in sent {
            if prev == Some(tok) || rng.gen_bool(0.3) {
                for _ in 0..rng.gen_range(1..3) {
                    frames.push(0);
                }
            }
            start.get_or_insert(frames.len());
            for _ in 0..rng.gen_range(1..4) {
                frames.push(tok as usize);
            }
            prev = Some(tok);
        }
        spans.push((start.unwrap(), frames.len()));
    }
    for _ in 0..rng.gen_range(0..4) {
        frames.push(0);
    }
    let mut logp = vec![f32::NEG_INFINITY; frames.len() * vocab];
    for (t, &k) in frames.iter().enumerate() {
        logp[t * vocab + k] = 0.0;
    }
    (PosteriorMatrix::new(40, vocab, logp).unwrap(), spans)
}

#[test]
fn flexible_graph_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let n = rng.gen_range(1..30);
        let sents = random_sentences(&mut rng, n, 9, 50);
        let g = build_flexible_graph(&sents, -8.0).unwrap();
        let total: usize = sents.iter().map(Vec::len).sum();
        assert_eq!(g.fsa.num_states, 1 + total);
        assert_eq!(g.fsa.arcs.len(), total + n);
        assert_eq!(g.fsa.num_epsilon_arcs(), n);
        assert_eq!(g.num_sentences(), n);
    }
}

#[test]
fn factor_transducer_accepts_exactly_the_substrings() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let n = rng.gen_range(1..5);
        let sents = random_sentences(&mut rng, n, 5, 4);
        let flat: Vec<TokenId> = sents.iter().flatten().copied().collect();
        let fsa = build_factor_transducer(&sents, -1.0).unwrap();
        for a in 0..flat.len() {
            for b in a + 1..=flat.len() {
                assert!(fsa.best_path_score(&flat[a..b]).unwrap().is_some());
            }
        }
        for _ in 0..40 {
            let probe: Vec<TokenId> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(1..4)).collect();
            let is_factor = flat.windows(probe.len()).any(|w| w == probe.as_slice());
            assert_eq!(fsa.best_path_score(&probe).unwrap().is_some(), is_factor, "{probe:?} in {flat:?}");
        }
    }
}

#[test]
fn noiseless_posteriors_align_every_sentence_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..30 {
        let n = rng.gen_range(1..25);
        let sents = random_sentences(&mut rng, n, 8, 30);
        let (post, spans) = one_hot_render(&mut rng, &sents, 30);
        let got = flex_align(&post, &sents, -8.0, None).unwrap();
        for (s, want) in got.sentences.iter().zip(&spans) {
            assert_eq!(s.span(), Some(*want));
        }
    }
}

#[test]
fn noiseless_long_recording_aligns_exactly_through_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..3 {
        let sents = random_sentences(&mut rng, 300, 10, 60);
        let (post, spans) = one_hot_render(&mut rng, &sents, 60);
        let cfg = WindowConfig { len_frames: 600, overlap_frames: 200, ..WindowConfig::default() };
        assert!(window_starts(post.frames(), 600, 200).len() > 3);
        let got = flex_align_window(&post, &sents, &cfg, None).unwrap();
        got.check_invariants().unwrap();
        for (i, (s, want)) in got.sentences.iter().zip(&spans).enumerate() {
            assert_eq!(s.span(), Some(*want), "sentence {i}");
        }
    }
}

#[test]
fn raising_skip_weight_never_reduces_skips() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let weights = [-12.0, -8.0, -4.0, -2.0, -1.0, 0.0];
    for _ in 0..150 {
        let v = rng.gen_range(3..6);
        let n = rng.gen_range(1..6);
        let sents = random_sentences(&mut rng, n, 3, v);
        let frames = rng.gen_range(1..14);
        let post = common::quantized_posteriors(&mut rng, frames, v);
        let mut last = 0;
        for w in weights {
            let skipped = flex_align(&post, &sents, w, None)
                .unwrap()
                .sentences
                .iter()
                .filter(|s| matches!(s, SentenceStatus::Skipped))
                .count();
            assert!(skipped >= last, "weight {w}: {skipped} < {last}");
            last = skipped;
        }
    }
}

#[test]
fn window_graphs_are_never_larger_than_the_whole_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..50 {
        let n = rng.gen_range(2..40);
        let sents = random_sentences(&mut rng, n, 9, 50);
        let whole = build_flexible_graph(&sents, -8.0).unwrap();
        let a = rng.gen_range(0..sents.len());
        let b = rng.gen_range(a + 1..=sents.len());
        let window = build_flexible_graph(&sents[a..b], -8.0).unwrap();
        assert!(window.fsa.num_states <= whole.fsa.num_states);
        assert!(window.fsa.arcs.len() <= whole.fsa.arcs.len());
    }
}
