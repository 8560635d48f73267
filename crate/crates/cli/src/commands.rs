use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use longalign_core::anchor::{first_pass, train_doc_lm, FirstPassConfig, RegionPair};
use longalign_core::bitext::{align_sentences, filter_alignments, BitextParams};
use longalign_core::decode::{flex_align_window, WindowConfig};
use longalign_core::embedding::read_embeddings;
use longalign_core::jsonl::{read_json, read_jsonl, write_json, write_jsonl};
use longalign_core::lm::{read_arpa, write_arpa, LmConfig};
use longalign_core::manifest::{read_manifest, write_manifest};
use longalign_core::pipeline::ingest::{frames_to_vad, read_vad, silence_segments, topic_cuts, vad_to_frames};
use longalign_core::pipeline::{
    evaluate_run, run_pipeline, validate_run, AlignRow, PipelineConfig, PipelineError, RejectedRow,
};
use longalign_core::posterior::{read_posteriors, PosteriorMatrix};
use longalign_core::quality::{post_filter, threshold_precision, FilterThresholds, LabelSheetRow};
use longalign_core::splits::{default_specs, make_splits, SplitConfig, SplitSpec};
use longalign_core::synth::{gen_corpus, gen_split_manifest, write_bundle, SynthConfig};
use longalign_core::textproc::{is_speakable, romanize, tokenize, MarkerPattern, PronLexicon, Sentence, SentenceDoc};
use longalign_core::vocab::Vocab;
use longalign_core::Error;

use super::{
    BitextArgs, Cli, Command, ConfigArg, CutsArgs, EvalArgs, FilterArgs, FirstPassArgs, FlexAlignArgs, PipelineArgs,
    PrepTextArgs, SegmentArgs, SplitArgs, SynthArgs, TrainLmArgs,
};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_STAGE: u8 = 3;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Res<T = ()> = Result<T, Failure>;

trait Exit<T> {
    /// Bad flags or config files.
    fn or_config(self) -> Res<T>;
    /// Failure while processing inputs; core config errors still map to 2.
    fn or_stage(self) -> Res<T>;
}

impl<T, E: Into<anyhow::Error>> Exit<T> for Result<T, E> {
    fn or_config(self) -> Res<T> {
        self.map_err(|e| Failure {
            code: EXIT_CONFIG,
            error: e.into(),
        })
    }

    fn or_stage(self) -> Res<T> {
        self.map_err(|e| {
            let error = e.into();
            let code = match error.downcast_ref::<Error>() {
                Some(Error::Config(_)) => EXIT_CONFIG,
                _ => EXIT_STAGE,
            };
            Failure { code, error }
        })
    }
}

fn print_json<T: Serialize>(v: &T) -> Res {
    let s = serde_json::to_string_pretty(v).or_stage()?;
    println!("{s}");
    Ok(())
}

pub fn dispatch(cli: Cli) -> Res {
    let seed = cli.seed;
    match cli.command {
        Command::PrepText(a) => prep_text(a),
        Command::BitextAlign(a) => bitext(a, seed.unwrap_or(0)),
        Command::TrainLm(a) => train_lm(a),
        Command::FirstPass(a) => first_pass_cmd(a),
        Command::FlexAlign(a) => flex_align(a),
        Command::Filter(a) => filter(a),
        Command::Split(a) => split(a, seed.unwrap_or(0)),
        Command::Synth(a) => synth(a, seed.unwrap_or(0)),
        Command::Eval(a) => eval(a),
        Command::Validate(a) => validate(a),
        Command::Pipeline(a) => pipeline(a, seed),
        Command::Cuts(a) => cuts(a),
        Command::Segment(a) => segment(a),
    }
}

fn read_sentences(path: &Path) -> Res<SentenceDoc> {
    let rows: Vec<Sentence> = read_jsonl(path).or_stage()?;
    let doc_id = rows
        .first()
        .and_then(|s| s.sent_id.rsplit_once("_s").map(|(d, _)| d.to_string()))
        .unwrap_or_default();
    Ok(SentenceDoc::from_sentences(&doc_id, rows))
}

fn prep_text(a: PrepTextArgs) -> Res {
    let pattern = match &a.marker_pattern {
        Some(p) => MarkerPattern::new(p).or_config()?,
        None => MarkerPattern::default(),
    };
    let terminators: Vec<char> = match &a.terminators {
        Some(t) => t.chars().collect(),
        None => longalign_core::textproc::DEFAULT_TERMINATORS.to_vec(),
    };
    let lexicon = a.lexicon.as_ref().map(PronLexicon::read).transpose().or_config()?;
    let raw = fs::read_to_string(&a.transcript)
        .with_context(|| format!("reading {}", a.transcript.display()))
        .or_stage()?;
    let mut doc = SentenceDoc::from_raw(&a.doc_id, &raw, &pattern, &terminators).or_stage()?;
    let mut unmapped = 0;
    if let Some(lex) = &lexicon {
        for s in &mut doc.sentences {
            let r = romanize(&s.tokens, lex);
            unmapped += r.unmapped;
            s.tokens = r.tokens;
        }
    }
    write_jsonl(&a.out, &doc.sentences).or_stage()?;
    print_json(&serde_json::json!({
        "turns": doc.turns.len(),
        "sentences": doc.sentences.len(),
        "unmapped_tokens": unmapped,
    }))
}

fn dropped_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.dropped.jsonl"))
}

fn bitext(a: BitextArgs, seed: u64) -> Res {
    if !a.threshold.is_finite() {
        return Err(anyhow!("threshold must be finite")).or_config();
    }
    let mut params = BitextParams {
        seed,
        ..BitextParams::default()
    };
    if let Some(m) = a.max_merge {
        params.max_merge = m;
    }
    if let Some(w) = a.window {
        params.window = w;
    }
    let src = read_embeddings(&a.src).or_stage()?;
    let tgt = read_embeddings(&a.tgt).or_stage()?;
    let pairs = align_sentences(&src, &tgt, &params).or_stage()?;
    let (kept, dropped) = filter_alignments(&pairs, a.threshold);
    write_jsonl(&a.out, &kept).or_stage()?;
    write_jsonl(a.dropped.unwrap_or_else(|| dropped_path(&a.out)), &dropped).or_stage()?;
    print_json(&serde_json::json!({"pairs_kept": kept.len(), "pairs_dropped": dropped.len()}))
}

fn train_lm(a: TrainLmArgs) -> Res {
    let mut cfg = LmConfig::default();
    if let Some(o) = a.order {
        cfg.order = o;
    }
    if let Some(l) = a.bias_lambda {
        cfg.bias_lambda = l;
    }
    let vocab = Vocab::read(&a.vocab).or_stage()?;
    let doc = read_sentences(&a.sentences)?;
    let background: Vec<Vec<String>> = match &a.background {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .or_stage()?
            .lines()
            .map(|l| tokenize(l).into_iter().filter(|t| is_speakable(t)).collect::<Vec<_>>())
            .filter(|s| !s.is_empty())
            .collect(),
        None => Vec::new(),
    };
    let lm = train_doc_lm(&doc, &vocab, &background, &cfg).or_stage()?;
    write_arpa(&lm, &a.out).or_stage()?;
    print_json(&serde_json::json!({"order": lm.order(), "vocab": lm.vocab().len(), "contexts": lm.num_contexts()}))
}

fn first_pass_cmd(a: FirstPassArgs) -> Res {
    let vocab = Vocab::read(&a.vocab).or_stage()?;
    let doc = read_sentences(&a.sentences)?;
    let lm = read_arpa(&a.lm).or_stage()?;
    let segments: Vec<(usize, PosteriorMatrix)> = match &a.vad {
        Some(vad) => {
            if a.posts.len() != 1 {
                return Err(anyhow!("--vad takes exactly one --posts file")).or_config();
            }
            let post = read_posteriors(&a.posts[0]).or_stage()?;
            let frames = vad_to_frames(&read_vad(vad).or_stage()?, post.hop_ms(), post.frames());
            frames
                .iter()
                .map(|&(s, e)| Ok((s, post.slice(s, e)?)))
                .collect::<longalign_core::Result<_>>()
                .or_stage()?
        }
        None => {
            let mut offset = 0;
            let mut segs = Vec::new();
            for p in &a.posts {
                let post = read_posteriors(p).or_stage()?;
                let n = post.frames();
                segs.push((offset, post));
                offset += n;
            }
            segs
        }
    };
    let mut cfg = FirstPassConfig::default();
    if let Some(b) = a.beam {
        cfg.beam = Some(b);
    }
    if let Some(e) = a.expand_tokens {
        cfg.expand_tokens = e;
    }
    let out = first_pass(&segments, &doc, &vocab, &lm, &cfg).or_stage()?;
    write_jsonl(&a.out, &out.regions).or_stage()?;
    if let Some(h) = &a.hyp {
        write_jsonl(h, &out.hyp).or_stage()?;
    }
    print_json(&serde_json::json!({
        "segments": segments.len(),
        "hyp_tokens": out.hyp.len(),
        "anchors": out.anchors.len(),
        "regions": out.regions.len(),
        "failed_segments": out.failed_segments,
    }))
}

fn flex_align(a: FlexAlignArgs) -> Res {
    let vocab = Vocab::read(&a.vocab).or_stage()?;
    let doc = read_sentences(&a.sentences)?;
    let floor = match a.emission_floor.as_str() {
        "none" => None,
        v => Some(v.parse::<f64>().map_err(|e| anyhow!("--emission-floor {v:?}: {e}")).or_config()?),
    };
    if floor.is_some_and(|f| !(f.is_finite() && f <= -5.0)) {
        return Err(anyhow!("--emission-floor must be finite and at most -5")).or_config();
    }
    let mut post = read_posteriors(&a.posts).or_stage()?;
    if let Some(f) = floor {
        post = post.floored(f as f32);
    }
    let mut cfg = WindowConfig::from_seconds(a.window_s, a.overlap_s, post.hop_ms());
    if let Some(w) = a.skip_weight {
        cfg.skip_weight = w;
    }
    if let Some(w) = a.filler_weight {
        cfg.filler_weight = w;
    }
    cfg.beam = a.beam;
    let regions: Option<Vec<RegionPair>> = a.regions.as_ref().map(read_jsonl).transpose().or_stage()?;
    let ids: Vec<Vec<u32>> = doc
        .sentences
        .iter()
        .map(|s| s.speakable_tokens().map(|t| vocab.lookup(t)).collect())
        .collect();
    let fa = flex_align_window(&post, &ids, &cfg, regions.as_deref()).or_stage()?;
    let rows: Vec<AlignRow> = doc
        .sentences
        .iter()
        .zip(&fa.sentences)
        .map(|(s, st)| AlignRow::from_status(&s.sent_id, st, post.hop_ms()))
        .collect();
    write_jsonl(&a.out, &rows).or_stage()?;
    print_json(&serde_json::json!({"aligned": fa.num_aligned(), "skipped": fa.num_skipped()}))
}

fn filter(a: FilterArgs) -> Res {
    if let Some(labels) = &a.labels {
        return label_precision(labels, &a.source, &a.cer_thresholds);
    }
    let manifest = a.manifest.as_ref().expect("clap requires --manifest or --labels");
    let out = a.out.as_ref().ok_or_else(|| anyhow!("--out is required with --manifest")).or_config()?;
    let mut th = FilterThresholds::default();
    if let Some(v) = a.max_cer {
        th.max_cer = v;
    }
    if let Some(v) = a.max_consecutive_errors {
        th.max_consecutive_errors = v;
    }
    if let Some(v) = a.max_error_ratio {
        th.max_error_ratio = v;
    }
    let rows = read_manifest(manifest).or_stage()?;
    let scored = rows
        .into_iter()
        .map(|r| match r.quality {
            Some(q) => Ok((r, q)),
            None => Err(anyhow!("row {} has no quality stats", r.utt_id)),
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .or_stage()?;
    let (kept, rejected) = post_filter(scored, &th);
    let kept: Vec<_> = kept.into_iter().map(|(r, _)| r).collect();
    let rejected: Vec<_> = rejected.into_iter().map(|(r, _)| r).collect();
    write_manifest(out, &kept).or_stage()?;
    if let Some(p) = &a.rejected {
        write_manifest(p, &rejected).or_stage()?;
    }
    print_json(&serde_json::json!({"kept": kept.len(), "rejected": rejected.len()}))
}

#[derive(Serialize)]
struct PrecisionRow {
    cer_threshold: f64,
    n_accepted: usize,
    precision: Option<f64>,
}

fn label_precision(labels: &Path, sources: &[PathBuf], thresholds: &[f64]) -> Res {
    let sheet: Vec<LabelSheetRow> = read_jsonl(labels).or_stage()?;
    let dir = labels.parent().unwrap_or(Path::new("."));
    let mut cer: BTreeMap<String, f64> = BTreeMap::new();
    if sources.is_empty() {
        for r in read_manifest(dir.join("triplets.jsonl")).or_stage()? {
            if let Some(q) = r.quality {
                cer.insert(r.utt_id, q.cer);
            }
        }
        let rejected = dir.join("rejected.jsonl");
        if rejected.is_file() {
            for r in read_jsonl::<RejectedRow>(&rejected).or_stage()? {
                if let Some(q) = r.quality {
                    cer.insert(r.utt_id, q.cer);
                }
            }
        }
    } else {
        for p in sources {
            for r in read_manifest(p).or_stage()? {
                if let Some(q) = r.quality {
                    cer.insert(r.utt_id, q.cer);
                }
            }
        }
    }
    let mut labelled = Vec::new();
    for row in &sheet {
        if let Some(ok) = row.label {
            let c = cer
                .get(&row.utt_id)
                .ok_or_else(|| anyhow!("no quality stats for labeled utterance {}", row.utt_id))
                .or_stage()?;
            labelled.push((*c, ok));
        }
    }
    let rows: Vec<PrecisionRow> = threshold_precision(&labelled, thresholds)
        .into_iter()
        .map(|(t, n, p)| PrecisionRow {
            cer_threshold: t,
            n_accepted: n,
            precision: (!p.is_nan()).then_some(p),
        })
        .collect();
    print_json(&rows)
}

fn split(a: SplitArgs, seed: u64) -> Res {
    let specs: Vec<SplitSpec> = match &a.spec {
        Some(p) => read_json(p).or_config()?,
        None => default_specs(),
    };
    let mut cfg = SplitConfig::default();
    if let Some(r) = a.restarts {
        cfg.restarts = r;
    }
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    let rows = read_manifest(&a.manifest).or_stage()?;
    let sa = make_splits(&rows, &specs, seed, &cfg).or_stage()?;
    write_json(&a.out, &sa).or_stage()?;
    print_json(&sa.report)
}

fn synth(a: SynthArgs, seed: u64) -> Res {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p).or_config()?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.docs {
        cfg.n_docs = v;
    }
    if let Some(v) = a.sentences {
        cfg.size.n_sentences = v;
    }
    if let Some(v) = a.vocab_size {
        cfg.size.vocab_size = v;
    }
    for (field, v) in [
        (&mut cfg.noise.p_sub, a.p_sub),
        (&mut cfg.noise.p_reorder, a.p_reorder),
        (&mut cfg.noise.p_unspoken, a.p_unspoken),
        (&mut cfg.noise.p_acoustic, a.p_acoustic),
    ] {
        if let Some(v) = v {
            *field = v;
        }
    }
    cfg.noise.validate().or_config()?;
    if a.split_manifest {
        let n_docs = a.docs.unwrap_or(200);
        let rows = gen_split_manifest(n_docs, a.speakers, seed);
        write_manifest(&a.out, &rows).or_stage()?;
        return print_json(&serde_json::json!({"rows": rows.len(), "docs": n_docs}));
    }
    let meetings = gen_corpus(&cfg, seed).or_config()?;
    write_bundle(&a.out, &cfg, &meetings).or_stage()?;
    print_json(&serde_json::json!({
        "docs": meetings.len(),
        "sentences": meetings.iter().map(|m| m.sentences.len()).sum::<usize>(),
    }))
}

fn eval(a: EvalArgs) -> Res {
    let report = evaluate_run(&a.bundle, &a.run, a.k).or_stage()?;
    if let Some(p) = &a.out {
        write_json(p, &report).or_stage()?;
    }
    print_json(&serde_json::json!({
        "docs": report.docs.len(),
        "k_frames": a.k,
        "mean_boundary_accuracy": report.mean_boundary_accuracy,
        "mean_skip_precision": report.mean_skip_precision,
        "mean_skip_recall": report.mean_skip_recall,
    }))
}

fn validate(a: ConfigArg) -> Res {
    let cfg = PipelineConfig::read(&a.config).or_config()?;
    let report = validate_run(&cfg).or_stage()?;
    print_json(&report)?;
    if report.ok() {
        Ok(())
    } else {
        Err(anyhow!("{} of {} triplets failed validation", report.problems.len(), report.checked)).or_stage()
    }
}

fn pipeline(a: PipelineArgs, seed: Option<u64>) -> Res {
    let mut cfg = match (&a.config, &a.input, &a.output) {
        (Some(p), _, _) => PipelineConfig::read(p).or_config()?,
        (None, Some(i), Some(o)) => PipelineConfig::new(i, o, 0),
        _ => return Err(anyhow!("give --config, or both --input and --output")).or_config(),
    };
    if let Some(i) = a.input {
        cfg.input_dir = i;
    }
    if let Some(o) = a.output {
        cfg.output_dir = o;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    match run_pipeline(&cfg) {
        Ok(report) => print_json(&report),
        Err(e @ PipelineError::Config(_)) => Err(e).or_config(),
        Err(e) => Err(Failure {
            code: EXIT_STAGE,
            error: e.into(),
        }),
    }
}

fn cuts(a: CutsArgs) -> Res {
    let text = fs::read_to_string(&a.metadata)
        .with_context(|| format!("reading {}", a.metadata.display()))
        .or_stage()?;
    let mut meta = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (ts, label) = line.split_once('\t').unwrap_or((line, ""));
        let t: f64 = ts
            .trim()
            .parse()
            .with_context(|| format!("{} line {}: bad timestamp", a.metadata.display(), n + 1))
            .or_stage()?;
        meta.push((t, label.trim().to_string()));
    }
    let cuts = topic_cuts(&a.recording, &meta, a.duration_s).or_stage()?;
    write_json(&a.out, &cuts).or_stage()?;
    print_json(&serde_json::json!({"entries": cuts.entries.len()}))
}

fn segment(a: SegmentArgs) -> Res {
    let post = read_posteriors(&a.posts).or_stage()?;
    let segs = silence_segments(&post, a.min_gap);
    write_jsonl(&a.out, &frames_to_vad(&segs, post.hop_ms())).or_stage()?;
    print_json(&serde_json::json!({"segments": segs.len()}))
}
