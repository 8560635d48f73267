use longalign_core::decode::{flex_align, flex_align_window, WindowConfig};
use longalign_core::synth::{gen_meeting, score_alignment, MeetingSize, NoiseParams};
use longalign_core::vocab::TokenId;

fn sentence_ids(m: &longalign_core::synth::Meeting) -> Vec<Vec<TokenId>> {
    let vocab = longalign_core::synth::synth_vocab(200);
    m.sentences.iter().map(|s| vocab.encode(&s.transcript)).collect()
}

#[test]
fn windows_match_whole_utterance_on_short_segments() {
    for p_acoustic in [0.0, 0.1] {
        for seed in 0..20 {
            let noise = NoiseParams { p_unspoken: 0.1, p_acoustic, ..Default::default() };
            let size = MeetingSize { n_sentences: 24, ..Default::default() };
            let m = gen_meeting(&noise, &size, seed).unwrap();
            assert!(m.posteriors.frames() * 40 <= 120_000, "segment longer than 2 min");
            let sents = sentence_ids(&m);
            let cfg = WindowConfig::from_seconds(60.0, 20.0, 40);
            let whole = flex_align(&m.posteriors, &sents, cfg.skip_weight, None).unwrap();
            let windowed = flex_align_window(&m.posteriors, &sents, &cfg, None).unwrap();
            let s = score_alignment(&whole, &m.gold, 0).unwrap();
            eprintln!("pa {p_acoustic} seed {seed}: frames {} whole {:?}", m.posteriors.frames(), s);
            assert_eq!(windowed.sentences.len(), whole.sentences.len());
            for (i, (a, b)) in windowed.sentences.iter().zip(&whole.sentences).enumerate() {
                assert_eq!(a.span(), b.span(), "pa {p_acoustic} seed {seed} sentence {i}");
            }
        }
    }
}
