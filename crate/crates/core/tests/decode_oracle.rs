mod common;

use longalign_core::decode::{viterbi_align, DecodeResult};
use longalign_core::fsa::Fsa;
use longalign_core::posterior::PosteriorMatrix;
use longalign_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rescores a decode independently: frame emissions of its labeling plus the
/// best graph path for its label string.
fn rescore(post: &PosteriorMatrix, fsa: &Fsa, r: &DecodeResult) -> f64 {
    let mut frame_label = vec![0usize; post.frames()];
    for (k, &(a, b)) in r.spans.iter().enumerate() {
        for f in &mut frame_label[a..b] {
            *f = r.labels[k] as usize;
        }
    }
    let emissions: f64 = frame_label.iter().enumerate().map(|(t, &l)| post.get(t, l) as f64).sum();
    emissions + fsa.best_path_score(&r.labels).unwrap().expect("decoded labels accepted")
}

#[test]
fn viterbi_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut with_path = 0;
    for case in 0..600 {
        let v = rng.gen_range(2..=4);
        let t = rng.gen_range(1..=12);
        let post = common::quantized_posteriors(&mut rng, t, v);
        let fsa = common::random_graph(&mut rng, v, 6);
        let oracle = common::brute_force_best(&post, &fsa);
        match (viterbi_align(&post, &fsa, None), oracle) {
            (Ok(r), Some(best)) => {
                assert_eq!(r.total_logprob, best, "case {case}");
                assert_eq!(rescore(&post, &fsa, &r), best, "case {case}");
                assert_eq!(r.labels.len(), r.spans.len());
                assert!(r.spans.windows(2).all(|w| w[0].1 <= w[1].0));
                with_path += 1;
            }
            (Err(Error::NoPath), None) => {}
            (got, want) => panic!("case {case}: decoder {got:?}, oracle {want:?}"),
        }
    }
    assert!(with_path > 200, "too few instances with a path: {with_path}");
}

#[test]
fn beam_never_beats_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let v = rng.gen_range(2..=4);
        let t = rng.gen_range(1..=12);
        let post = common::quantized_posteriors(&mut rng, t, v);
        let fsa = common::random_graph(&mut rng, v, 6);
        if let (Ok(exact), Ok(beam)) = (viterbi_align(&post, &fsa, None), viterbi_align(&post, &fsa, Some(2.0))) {
            assert!(beam.total_logprob <= exact.total_logprob);
            // The beam may have pruned a better graph path for the same labels.
            let r = rescore(&post, &fsa, &beam);
            assert!(r >= beam.total_logprob && r <= exact.total_logprob);
        }
    }
}
