//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//! Run with `cargo test -p longalign-core --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use longalign_core::anchor::{align_text, edit_cost, EditCosts};
use longalign_core::bitext::{align_sentences, filter_alignments, total_cost, AlignmentPair, BitextParams, DEFAULT_THRESHOLD};
use longalign_core::decode::{flex_align, flex_align_window, viterbi_align, WindowConfig};
use longalign_core::jsonl::read_jsonl;
use longalign_core::lm::{lm_to_fsa, perplexity, train_ngram, NgramLM};
use longalign_core::manifest::read_manifest;
use longalign_core::pipeline::{evaluate_run, run_pipeline, OutputPaths, PipelineConfig, RejectedRow};
use longalign_core::splits::{default_specs, evaluate_assignment, make_splits, SplitConfig};
use longalign_core::synth::{
    gen_corpus, gen_meeting, gen_split_manifest, gold_path, read_gold, synth_vocab, write_bundle, MeetingSize,
    NoiseParams, SynthConfig,
};
use longalign_core::vocab::{TokenId, Vocab, BLANK, UNK};
use longalign_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn bundle(dir: &Path, cfg: &SynthConfig, seed: u64) {
    write_bundle(dir, cfg, &gen_corpus(cfg, seed).unwrap()).unwrap();
}

fn zero_noise_fixed_point() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("bundle"), dir.path().join("out"));
    let synth = SynthConfig { n_docs: 20, ..SynthConfig::default() };
    ensure!(synth.size.n_sentences == 200, "bundle must have 200 sentences per document");
    bundle(&input, &synth, 1);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let started = Instant::now();
    pool.install(|| run_pipeline(&PipelineConfig::new(&input, &output, 1))).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");

    let eval = evaluate_run(&input, &output, 0).unwrap();
    let exact: usize = eval.docs.iter().map(|d| d.exact_spans).sum();
    let spoken: usize = eval.docs.iter().map(|d| d.spoken).sum();
    ensure!(eval.docs.len() == 20 && exact == spoken && spoken == 20 * 200, "{exact}/{spoken} sentence spans exact");
    ensure!(eval.mean_skip_precision == 1.0 && eval.mean_skip_recall == 1.0, "skip scores {eval:?}");

    let paths = OutputPaths::new(&output);
    let rejected: Vec<RejectedRow> = read_jsonl(paths.rejected()).unwrap();
    let unaligned = rejected.iter().filter(|r| r.reason == "unaligned").count();
    ensure!(unaligned == 0, "{unaligned} pairs rejected for skipped sentences");

    let mut gold = BTreeMap::new();
    for d in &eval.docs {
        for g in read_gold(gold_path(&input, &d.doc_id)).unwrap() {
            gold.insert(g.sent_id.clone(), g);
        }
    }
    let triplets = read_manifest(paths.triplets()).unwrap();
    ensure!(!triplets.is_empty(), "no triplets");
    for t in &triplets {
        let p = t.provenance.as_ref().ok_or(format!("{} lacks provenance", t.utt_id))?;
        let first = &gold[p.src_sent_ids.first().unwrap()];
        let last = &gold[p.src_sent_ids.last().unwrap()];
        ensure!(
            (p.start_frame, p.end_frame) == (first.start_frame, last.end_frame),
            "{}: span {:?} vs gold {:?}",
            t.utt_id,
            (p.start_frame, p.end_frame),
            (first.start_frame, last.end_frame)
        );
    }
    Ok(format!(
        "{spoken} spans exact, {} triplets match gold, 0 skipped, {:.1}s on one thread",
        triplets.len(),
        elapsed.as_secs_f64()
    ))
}

fn unspoken_filtering() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("bundle"), dir.path().join("out"));
    let synth = SynthConfig {
        n_docs: 20,
        noise: NoiseParams { p_unspoken: 0.1, p_acoustic: 0.0, ..NoiseParams::default() },
        ..SynthConfig::default()
    };
    bundle(&input, &synth, 2);
    run_pipeline(&PipelineConfig::new(&input, &output, 2)).map_err(|e| e.to_string())?;
    let eval = evaluate_run(&input, &output, 0).unwrap();
    for d in &eval.docs {
        ensure!(
            d.score.skip_precision == 1.0 && d.score.skip_recall == 1.0,
            "{}: precision {} recall {}",
            d.doc_id,
            d.score.skip_precision,
            d.score.skip_recall
        );
    }
    let unspoken: usize = eval.docs.iter().map(|d| 200 - d.spoken).sum();
    ensure!(unspoken > 0, "no unspoken sentences generated");
    Ok(format!("skip precision = recall = 1.0 over {} docs, {unspoken} unspoken sentences", eval.docs.len()))
}

fn window_equivalence() -> Outcome {
    let vocab = synth_vocab(MeetingSize::default().vocab_size);
    let mut compared = 0;
    for seed in 0..20 {
        let noise = NoiseParams { p_unspoken: 0.1, p_acoustic: 0.1, ..NoiseParams::default() };
        let m = gen_meeting(&noise, &MeetingSize { n_sentences: 24, ..MeetingSize::default() }, seed).unwrap();
        let ms = m.posteriors.frames() as u64 * m.posteriors.hop_ms() as u64;
        ensure!(ms <= 120_000, "seed {seed}: segment is {ms} ms");
        let sents: Vec<Vec<TokenId>> = m.sentences.iter().map(|s| vocab.encode(&s.transcript)).collect();
        let cfg = WindowConfig::from_seconds(60.0, 20.0, m.posteriors.hop_ms());
        let whole = flex_align(&m.posteriors, &sents, cfg.skip_weight, None).unwrap();
        let windowed = flex_align_window(&m.posteriors, &sents, &cfg, None).unwrap();
        ensure!(whole == windowed, "seed {seed}: outputs differ");
        compared += sents.len();
    }
    Ok(format!("20 seeds identical ({compared} sentences)"))
}

fn viterbi_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut with_path, mut without) = (0, 0);
    for case in 0..1200 {
        let v = rng.gen_range(2..=4);
        let t = rng.gen_range(1..=12);
        let post = common::quantized_posteriors(&mut rng, t, v);
        let fsa = common::random_graph(&mut rng, v, 6);
        match (viterbi_align(&post, &fsa, None), common::brute_force_best(&post, &fsa)) {
            (Ok(r), Some(best)) => {
                ensure!(r.total_logprob == best, "case {case}: {} vs {best}", r.total_logprob);
                with_path += 1;
            }
            (Err(Error::NoPath), None) => without += 1,
            (got, want) => return Err(format!("case {case}: decoder {got:?}, oracle {want:?}")),
        }
    }
    ensure!(with_path >= 500, "only {with_path} instances with a path");
    Ok(format!("{with_path} scored instances equal, {without} agree on no path"))
}

fn edit_distance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for case in 0..1200 {
        let k = [2u8, 3, 5][case % 3];
        let a: Vec<u8> = (0..rng.gen_range(0..=12)).map(|_| rng.gen_range(0..k)).collect();
        let b: Vec<u8> = (0..rng.gen_range(0..=12)).map(|_| rng.gen_range(0..k)).collect();
        let got = edit_cost(&align_text(&a, &b, EditCosts::default()), EditCosts::default());
        let want = common::edit_distance_recursive(&a, &b);
        ensure!(got == want, "case {case}: {a:?} vs {b:?}: {got} != {want}");
    }
    Ok("1200 pairs equal".into())
}

fn bitext_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for case in 0..100 {
        let src = common::random_embeddings(&mut rng, 20, 16, 4);
        let tgt = common::random_embeddings(&mut rng, 20, 16, 4);
        let params = BitextParams { base_size: 4, window: 20, seed: case, ..BitextParams::default() };
        let got = total_cost(&align_sentences(&src, &tgt, &params).unwrap());
        let (want, _) = common::exhaustive_bitext(&src, &tgt, &params);
        ensure!(got == want, "case {case}: {got} vs {want}");
    }
    Ok("100 instances of 20x20 equal".into())
}

fn filter_threshold() -> Outcome {
    ensure!(DEFAULT_THRESHOLD == 0.627, "default is {DEFAULT_THRESHOLD}");
    let pair = |cost| AlignmentPair { src_start: 0, src_len: 1, tgt_start: 0, tgt_len: 1, cost };
    let pairs = vec![pair(0.1), pair(0.627), pair(0.627f64.next_up()), pair(0.7)];
    let (kept, dropped) = filter_alignments(&pairs, DEFAULT_THRESHOLD);
    let costs = |v: &[AlignmentPair]| v.iter().map(|p| p.cost).collect::<Vec<_>>();
    ensure!(costs(&kept) == vec![0.1, 0.627], "kept {:?}", costs(&kept));
    ensure!(costs(&dropped) == vec![0.627f64.next_up(), 0.7], "dropped {:?}", costs(&dropped));
    Ok("default 0.627, cost 0.627 kept, next float up dropped".into())
}

fn lm_properties() -> Outcome {
    for v in [1usize, 2, 3, 5, 10, 100, 1000, 4096] {
        let toks: Vec<String> = (0..v).map(|i| format!("w{i}")).collect();
        let lm = NgramLM::uniform(&toks).unwrap();
        let seq: Vec<&String> = toks.iter().cycle().take(37).collect();
        let ppl = perplexity(&lm, &seq).unwrap();
        ensure!((ppl - v as f64).abs() <= 1e-12 * v as f64, "|V| = {v}: perplexity {ppl}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let word = |i: usize| format!("w{i}");
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for order in [2, 3, 4] {
        let train: Vec<Vec<String>> = (0..40)
            .map(|_| (0..rng.gen_range(1..12)).map(|_| word(rng.gen_range(0..10).min(rng.gen_range(0..10)))).collect())
            .collect();
        let lm = train_ngram(&train, order).unwrap();
        let mut toks = vec![BLANK.to_string(), UNK.to_string()];
        toks.extend(lm.vocab().iter().filter(|t| t.as_str() != UNK).cloned());
        let vocab = Vocab::from_tokens(toks).unwrap();
        let fsa = lm_to_fsa(&lm, &vocab);
        for _ in 0..50 {
            let seq: Vec<String> = (0..rng.gen_range(1..15)).map(|_| word(rng.gen_range(0..10))).collect();
            let path = fsa.best_path_score(&vocab.encode(&seq)).unwrap().ok_or("sequence rejected by graph")?;
            let diff = (path - lm.score(&seq)).abs();
            ensure!(diff < 1e-6, "order {order}: {seq:?} differs by {diff}");
            worst = worst.max(diff);
            checked += 1;
        }
    }
    Ok(format!("uniform perplexity = |V|; graph/model agree on {checked} sequences (max diff {worst:.1e})"))
}

fn splits() -> Outcome {
    let specs = default_specs();
    let rows = gen_split_manifest(200, 100, 17);
    let cfg = SplitConfig::default();
    let a = make_splits(&rows, &specs, 17, &cfg).map_err(|e| e.to_string())?;
    let b = make_splits(&rows, &specs, 17, &cfg).map_err(|e| e.to_string())?;
    ensure!(a == b, "not deterministic under seed");
    ensure!(evaluate_assignment(&rows, &specs, &a.assignment, cfg.alpha).unwrap() == a.report, "report not recomputable");

    // Independent recount from the rows.
    let mut hours: BTreeMap<&str, (f64, f64, f64)> = BTreeMap::new();
    let mut speakers: BTreeMap<&str, std::collections::BTreeSet<&str>> = BTreeMap::new();
    for r in &rows {
        let s = a.assignment[&r.doc_id].as_str();
        let e = hours.entry(s).or_default();
        let h = r.duration_s / 3600.0;
        e.0 += h;
        match r.gender {
            longalign_core::manifest::Gender::M => e.1 += h,
            longalign_core::manifest::Gender::F => e.2 += h,
            longalign_core::manifest::Gender::U => {}
        }
        speakers.entry(s).or_default().insert(&r.speaker_id);
    }
    let total: f64 = hours.values().map(|x| x.0).sum();
    let (gm, gf) = hours.values().fold((0.0, 0.0), |(m, f), x| (m + x.1, f + x.2));
    let global_m = gm / (gm + gf);
    let mut worst_l1: f64 = 0.0;
    let mut worst_size: f64 = 0.0;
    for spec in &specs {
        let &(h, m, f) = hours.get(spec.name.as_str()).ok_or(format!("{} empty", spec.name))?;
        let target = spec.target_fraction * total;
        worst_size = worst_size.max((h - target).abs() / target);
        let share = m / (m + f);
        worst_l1 = worst_l1.max(2.0 * (share - global_m).abs());
        if spec.require_speaker_disjoint_from_train {
            let shared = speakers[spec.name.as_str()].intersection(&speakers["train"]).count();
            ensure!(shared == 0, "{} shares {shared} speakers with train", spec.name);
        }
    }
    ensure!(worst_size <= 0.10, "hours off target by {:.1}%", 100.0 * worst_size);
    ensure!(worst_l1 <= 0.02, "gender L1 {worst_l1:.4}");
    Ok(format!(
        "disjointness exact, max size deviation {:.1}%, max gender L1 {worst_l1:.4}, deterministic",
        100.0 * worst_size
    ))
}

fn monotone_degradation() -> Outcome {
    let levels = [0.0, 0.1, 0.2, 0.3];
    let mut means = Vec::new();
    for &p_acoustic in &levels {
        let dir = tempfile::tempdir().unwrap();
        let (input, output) = (dir.path().join("bundle"), dir.path().join("out"));
        let synth = SynthConfig {
            n_docs: 20,
            noise: NoiseParams { p_sub: 0.1, p_unspoken: 0.1, p_acoustic, ..NoiseParams::default() },
            size: MeetingSize { n_sentences: 100, ..MeetingSize::default() },
            ..SynthConfig::default()
        };
        bundle(&input, &synth, 3);
        run_pipeline(&PipelineConfig::new(&input, &output, 3)).map_err(|e| e.to_string())?;
        means.push(evaluate_run(&input, &output, 5).unwrap().mean_boundary_accuracy);
    }
    let shown: Vec<String> = levels.iter().zip(&means).map(|(p, m)| format!("{p}: {m:.4}")).collect();
    ensure!(means.windows(2).all(|w| w[1] <= w[0]), "not monotone: {}", shown.join(", "));
    Ok(format!("boundary accuracy@5 over 20 documents: {}", shown.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("zero-noise fixed point", zero_noise_fixed_point),
        ("unspoken-text filtering", unspoken_filtering),
        ("sliding-window equivalence", window_equivalence),
        ("viterbi optimality", viterbi_optimality),
        ("edit-distance correctness", edit_distance),
        ("bitext dp optimality", bitext_optimality),
        ("filter threshold default", filter_threshold),
        ("lm properties", lm_properties),
        ("splits", splits),
        ("monotone degradation", monotone_degradation),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
