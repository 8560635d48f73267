use longalign_core::anchor::{first_pass, sentence_tokens, train_doc_lm, FirstPassConfig};
use longalign_core::lm::LmConfig;
use longalign_core::pipeline::ingest::silence_segments;
use longalign_core::posterior::PosteriorMatrix;
use longalign_core::synth::{gen_meeting, synth_vocab, Meeting, MeetingSize, NoiseParams};
use longalign_core::textproc::{MarkerPattern, SentenceDoc, DEFAULT_TERMINATORS};

struct Run {
    meeting: Meeting,
    doc: SentenceDoc,
    out: longalign_core::anchor::FirstPassOutput,
}

fn run(noise: NoiseParams, n_sentences: usize, seed: u64) -> Run {
    let meeting = gen_meeting(&noise, &MeetingSize { n_sentences, ..Default::default() }, seed).unwrap();
    let doc = SentenceDoc::from_raw("doc0", &meeting.transcript_text(), &MarkerPattern::default(), DEFAULT_TERMINATORS).unwrap();
    assert_eq!(doc.sentences.len(), meeting.sentences.len());
    let vocab = synth_vocab(MeetingSize::default().vocab_size);
    let lm = train_doc_lm(&doc, &vocab, &[], &LmConfig::default()).unwrap();
    let segments: Vec<(usize, PosteriorMatrix)> = silence_segments(&meeting.posteriors, 30)
        .into_iter()
        .map(|(a, b)| (a, meeting.posteriors.slice(a, b).unwrap()))
        .collect();
    let out = first_pass(&segments, &doc, &vocab, &lm, &FirstPassConfig::default()).unwrap();
    Run { meeting, doc, out }
}

fn anchored_share(r: &Run) -> f64 {
    let ref_len: usize = sentence_tokens(&r.doc).iter().map(Vec::len).sum();
    let anchored: usize = r.out.anchors.iter().map(|a| a.ref_span.1 - a.ref_span.0).sum();
    anchored as f64 / ref_len as f64
}

#[test]
fn noiseless_audio_is_almost_fully_anchored() {
    for seed in 0..5 {
        let r = run(NoiseParams::default(), 200, seed);
        assert!(r.out.failed_segments.is_empty());
        let share = anchored_share(&r);
        assert!(share >= 0.99, "seed {seed}: {share}");
    }
}

#[test]
fn regions_follow_transcript_order() {
    let noise = NoiseParams { p_sub: 0.05, p_unspoken: 0.1, p_acoustic: 0.1, ..Default::default() };
    for seed in 0..5 {
        let r = run(noise, 120, seed);
        assert!(!r.out.regions.is_empty());
        for w in r.out.regions.windows(2) {
            assert!(w[0].start_frame <= w[1].start_frame && w[0].end_frame <= w[1].end_frame);
            assert!(w[0].sent_start <= w[1].sent_start && w[0].sent_end <= w[1].sent_end);
        }
        for w in r.out.anchors.windows(2) {
            assert!(w[0].ref_span.1 <= w[1].ref_span.0 && w[0].hyp_span.1 <= w[1].hyp_span.0);
        }
    }
}

#[test]
fn no_anchor_crosses_an_unspoken_sentence() {
    let noise = NoiseParams { p_unspoken: 0.15, ..Default::default() };
    let max_consec = FirstPassConfig::default().criteria.max_consec;
    let mut checked = 0;
    for seed in 0..5 {
        let r = run(noise, 120, seed);
        let mut offset = 0;
        for (toks, s) in sentence_tokens(&r.doc).iter().zip(&r.meeting.sentences) {
            let span = (offset, offset + toks.len());
            offset = span.1;
            // A longer gap breaks the consecutive-error bound. Edge tokens may
            // still match when they coincide with neighbouring speech.
            if s.unspoken && toks.len() > max_consec {
                checked += 1;
                for a in &r.out.anchors {
                    assert!(!(a.ref_span.0 < span.0 && a.ref_span.1 > span.1), "seed {seed}: {a:?} crosses {span:?}");
                }
            }
        }
    }
    assert!(checked > 0);
}
