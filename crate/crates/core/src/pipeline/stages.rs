use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ingest::{frames_to_vad, read_vad, silence_segments, vad_to_frames, VadSegment};
use super::{OutputPaths, PipelineConfig, Stage};
use crate::anchor::{first_pass, train_doc_lm, FirstPassConfig, HypToken, RegionPair};
use crate::bitext::{align_sentences, filter_alignments, AlignmentPair};
use crate::decode::{flex_align_window, FlexAlignment, SentenceStatus, WindowConfig};
use crate::embedding::read_embeddings;
use crate::error::{Error, Result};
use crate::jsonl::{read_json, read_jsonl, write_json, write_jsonl};
use crate::lm::{read_arpa, write_arpa};
use crate::manifest::{read_manifest, write_manifest, Gender, Provenance, UtteranceManifestRow};
use crate::posterior::{read_posterior_hop, read_posteriors, PosteriorMatrix};
use crate::quality::{bin_sample, compute_stats, LabelSheetRow, QualityStats};
use crate::splits::{make_splits, SplitAssignment};
use crate::synth::{doc_paths, gold_path, read_gold, score_alignment, AlignmentScore, SpeakerRow};
use crate::textproc::{is_speakable, romanize, tokenize, MarkerPattern, PronLexicon, Sentence, SentenceDoc};
use crate::vocab::{TokenId, Vocab};

pub(super) struct StageOutcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

const SENTENCES: &str = "sentences.jsonl";
const PAIRS: &str = "pairs.jsonl";
const PAIRS_DROPPED: &str = "pairs.dropped.jsonl";
const LM: &str = "lm.arpa";
const SEGMENTS: &str = "segments.jsonl";
const HYP: &str = "hyp.jsonl";
const ANCHORS: &str = "anchors.jsonl";
const REGIONS: &str = "regions.jsonl";
const ALIGN: &str = "align.jsonl";

/// Per-sentence flexible-alignment result as written to `align.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignRow {
    pub sent_id: String,
    pub status: AlignStatus,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
    pub conf: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignStatus {
    Aligned,
    Skipped,
}

impl AlignRow {
    pub fn from_status(sent_id: &str, st: &SentenceStatus, hop_ms: u32) -> Self {
        let ms = |f: usize| f as u64 * u64::from(hop_ms);
        match *st {
            SentenceStatus::Aligned {
                start_frame,
                end_frame,
                conf,
            } => Self {
                sent_id: sent_id.to_string(),
                status: AlignStatus::Aligned,
                start_ms: Some(ms(start_frame)),
                end_ms: Some(ms(end_frame)),
                conf: Some(conf),
            },
            SentenceStatus::Skipped => Self {
                sent_id: sent_id.to_string(),
                status: AlignStatus::Skipped,
                start_ms: None,
                end_ms: None,
                conf: None,
            },
        }
    }

    pub fn to_status(&self, hop_ms: u32) -> Result<SentenceStatus> {
        match (self.status, self.start_ms, self.end_ms) {
            (AlignStatus::Skipped, ..) => Ok(SentenceStatus::Skipped),
            (AlignStatus::Aligned, Some(a), Some(b)) => {
                let hop = u64::from(hop_ms);
                if a % hop != 0 || b % hop != 0 || a >= b {
                    return Err(Error::Format(format!(
                        "{}: span {a}..{b} ms is not a frame range at {hop_ms} ms",
                        self.sent_id
                    )));
                }
                Ok(SentenceStatus::Aligned {
                    start_frame: (a / hop) as usize,
                    end_frame: (b / hop) as usize,
                    conf: self.conf.unwrap_or(0.0),
                })
            }
            _ => Err(Error::Format(format!("{}: aligned row without span", self.sent_id))),
        }
    }
}

/// A bitext pair that produced no triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub utt_id: String,
    pub doc_id: String,
    pub pair_index: usize,
    /// `"unpaired"`, `"unaligned"` or `"quality"`.
    pub reason: String,
    pub quality: Option<QualityStats>,
}

pub(super) fn stage_config(stage: Stage, cfg: &PipelineConfig) -> serde_json::Value {
    let v = match stage {
        Stage::PrepText => serde_json::to_value(&cfg.prep),
        Stage::BitextAlign => serde_json::to_value(cfg.bitext),
        Stage::TrainLm => serde_json::to_value(&cfg.lm),
        Stage::FirstPass => serde_json::to_value(cfg.first_pass),
        Stage::FlexAlign => serde_json::to_value(cfg.flex),
        Stage::Filter => serde_json::to_value(&cfg.filter),
        Stage::Split => serde_json::to_value(&cfg.split),
    };
    v.expect("stage configs serialize")
}

pub(super) fn run_stage(stage: Stage, cfg: &PipelineConfig, docs: &[String], out: &OutputPaths) -> Result<StageOutcome> {
    match stage {
        Stage::PrepText => prep_text(cfg, docs, out),
        Stage::BitextAlign => bitext_align(cfg, docs, out),
        Stage::TrainLm => train_lm(cfg, docs, out),
        Stage::FirstPass => first_pass_stage(cfg, docs, out),
        Stage::FlexAlign => flex_align_stage(cfg, docs, out),
        Stage::Filter => filter_stage(cfg, docs, out),
        Stage::Split => split_stage(cfg, out),
    }
}

/// Runs `f` on every document in parallel; the first failing document in
/// document order determines the error.
fn per_doc<T: Send>(docs: &[String], f: impl Fn(&str) -> Result<T> + Sync) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = docs.par_iter().map(|d| f(d)).collect();
    results
        .into_iter()
        .zip(docs)
        .map(|(r, d)| r.map_err(|e| e.context(format!("document {d}"))))
        .collect()
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "required input file is missing"),
        ))
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn vocab_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.input_dir.join("vocab.txt")
}

fn speakers_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.input_dir.join("speakers.jsonl")
}

fn read_sentences(out: &OutputPaths, doc: &str) -> Result<SentenceDoc> {
    let rows: Vec<Sentence> = read_jsonl(out.doc_file(doc, SENTENCES))?;
    Ok(SentenceDoc::from_sentences(doc, rows))
}

fn translation_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn prep_text(cfg: &PipelineConfig, docs: &[String], out: &OutputPaths) -> Result<StageOutcome> {
    let pattern = MarkerPattern::new(&cfg.prep.marker_pattern)?;
    let terminators: Vec<char> = cfg.prep.terminators.chars().collect();
    let lexicon = cfg.prep.lexicon.as_ref().map(PronLexicon::read).transpose()?;
    let per = per_doc(docs, |doc| {
        let p = doc_paths(&cfg.input_dir, doc);
        let raw = read_text(&p.transcript)?;
        let mut sd = SentenceDoc::from_raw(doc, &raw, &pattern, &terminators)?;
        let mut unmapped = 0;
        if let Some(lex) = &lexicon {
            for s in &mut sd.sentences {
                let r = romanize(&s.tokens, lex);
                unmapped += r.unmapped;
                s.tokens = r.tokens;
            }
        }
        mkdir(&out.doc_dir(doc))?;
        let dest = out.doc_file(doc, SENTENCES);
        write_jsonl(&dest, &sd.sentences)?;
        Ok((p.transcript, dest, sd.turns.len(), sd.sentences.len(), unmapped))
    })?;
    let mut inputs: Vec<PathBuf> = cfg.prep.lexicon.iter().cloned().collect();
    let mut outputs = Vec::new();
    let (mut turns, mut sentences, mut unmapped) = (0, 0, 0);
    for (i, o, t, s, u) in per {
        inputs.push(i);
        outputs.push(o);
        turns += t;
        sentences += s;
        unmapped += u;
    }
    Ok(StageOutcome {
        inputs,
        outputs,
        summary: json!({"turns": turns, "sentences": sentences, "unmapped_tokens": unmapped}),
    })
}

fn bitext_align(cfg: &PipelineConfig, docs: &[String], out: &OutputPaths) -> Result<StageOutcome> {
    let per = per_doc(docs, |doc| {
        let p = doc_paths(&cfg.input_dir, doc);
        require(&p.src_emb)?;
        require(&p.tgt_emb)?;
        let sd = read_sentences(out, doc)?;
        let src = read_embeddings(&p.src_emb)?;
        let tgt = read_embeddings(&p.tgt_emb)?;
        let lines = translation_lines(&p.translation)?;
        if src.n_sentences() != sd.sentences.len() {
            return Err(Error::UniverseMismatch(format!(
                "{} has {} sentences, transcript has {}",
                p.src_emb.display(),
                src.n_sentences(),
                sd.sentences.len()
            )));
        }
        if tgt.n_sentences() != lines.len() {
            return Err(Error::UniverseMismatch(format!(
                "{} has {} sentences, translation has {} lines",
                p.tgt_emb.display(),
                tgt.n_sentences(),
                lines.len()
            )));
        }
        let pairs = align_sentences(&src, &tgt, &cfg.bitext.params)?;
        let (kept, dropped) = filter_alignments(&pairs, cfg.bitext.threshold);
        let (kp, dp) = (out.doc_file(doc, PAIRS), out.doc_file(doc, PAIRS_DROPPED));
        write_jsonl(&kp, &kept)?;
        write_jsonl(&dp, &dropped)?;
        Ok((vec![p.src_emb, p.tgt_emb, p.translation], vec![kp, dp], kept.len(), dropped.len()))
    })?;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let (mut kept, mut dropped) = (0, 0);
    for (i, o, k, d) in per {
        inputs.extend(i);
        outputs.extend(o);
        kept += k;
        dropped += d;
    }
    Ok(StageOutcome {
        inputs,
        outputs,
        summary: json!({"pairs_kept": kept, "pairs_dropped": dropped}),
    })
}

fn read_background(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_text(path)?
        .lines()
        .map(|l| tokenize(l).into_iter().filter(|t| is_speakable(t)).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect())
}

fn train_lm(cfg: &PipelineConfig, docs: &[String], out: &OutputPaths) -> Result<StageOutcome> {
    let vocab = Vocab::read(vocab_path(cfg))?;
    let background = match &cfg.lm.background {
        Some(p) => read_background(p)?,
        None => Vec::new(),
    };
    let outputs = per_doc(docs, |doc| {
        let sd = read_sentences(out, doc)?;
        let lm = train_doc_lm(&sd, &vocab, &background, &cfg.lm.lm)?;
        let dest = out.doc_file(doc, LM);
        write_arpa(&lm, &dest)?;
        Ok(dest)
    })?;
    let mut inputs = vec![vocab_path(cfg)];
    inputs.extend(cfg.lm.background.iter().cloned());
    Ok(StageOutcome {
        inputs,
        outputs,
        summary: json!({"models": docs.len(), "background_sentences": background.len()}),
    })
}

fn read_doc_posteriors(cfg: &PipelineConfig, vocab: &Vocab, doc: &str) -> Result<(PathBuf, PosteriorMatrix)> {
    let path = doc_paths(&cfg.input_dir, doc).posteriors;
    let post = read_posteriors(&path)?;
    if post.vocab_size() != vocab.len() {
        return Err(Error::Format(format!(
            "{}: {} posterior columns for a {}-token vocabulary",
            path.display(),
            post.vocab_size(),
            vocab.len()
        )));
    }
    Ok((path, post))
}

fn first_pass_stage(cfg: &PipelineConfig, docs: &[String], out: &OutputPaths) -> Result<StageOutcome> {
    let vocab = Vocab::read(vocab_path(cfg))?;
    let fp_cfg = FirstPassConfig {
        criteria: cfg.first_pass.criteria,
        expand_tokens: cfg.first_pass.expand_tokens,
        beam: cfg.first_pass.beam,
        ..FirstPassConfig::default()
    };
    let per = per_doc(docs, |doc| {
        let (post_path, post) = read_doc_posteriors(cfg, &vocab, doc)?;
        let mut inputs = vec![post_path];
        let vad = doc_paths(&cfg.input_dir, doc).vad;
        let frames = if vad.is_file() {
            inputs.push(vad.clone());
            vad_to_frames(&read_vad(&vad)?, post.hop_ms(), post.frames())
        } else {
            silence_segments(&post, cfg.first_pass.vad_min_gap)
        };
        let segments: Vec<(usize, PosteriorMatrix)> = frames
            .iter()
            .map(|&(a, b)| Ok((a, post.slice(a, b)?)))
            .collect::<Result<_>>()?;
        let sd = read_sentences(out, doc)?;
        let lm = read_arpa(out.doc_file(doc, LM))?;
        let fp = first_pass(&segments, &sd, &vocab, &lm, &fp_cfg)?;
        let seg_rows: Vec<VadSegment> = frames_to_vad(&frames, post.hop_ms());
        let outputs = vec![
            out.doc_file(doc, SEGMENTS),
            out.doc_file(doc, HYP),
            out.doc_file(doc, ANCHORS),
            out.doc_file(doc, REGIONS),
        ];
        write_jsonl(&outputs[0], &seg_rows)?;
        write_jsonl(&outputs[1], &fp.hyp)?;
        write_jsonl(&outputs[2], &fp.anchors)?;
        write_jsonl(&outputs[3], &fp.regions)?;
        let ref_len: usize = sd.sentences.iter().map(|s| s.speakable_tokens().count()).sum();
        let anchored: usize = fp.anchors.iter().map(|a| a.ref_span.1 - a.ref_span.0).sum();
        Ok((inputs, outputs, segments.len(), fp.hyp.len(), fp.anchors.len(), anchored, ref_len, fp.failed_segments.len()))
    })?;
    let mut inputs = vec![vocab_path(cfg)];
    let mut outputs = Vec::new();
    let mut totals = [0usize; 6];
    for (i, o, segs, hyp, anchors, anchored, ref_len, failed) in per {
        inputs.extend(i);
        outputs.extend(o);
        for (t, v) in totals.iter_mut().zip([segs, hyp, anchors, anchored, ref_len, failed]) {
            *t += v;
        }
    }
    Ok(StageOutcome {
        inputs,
        outputs,
        summary: json!({
            "segments": totals[0],
            "hyp_tokens": totals[1],
            "anchors": totals[2],
            "anchored_ref_tokens": totals[3],
            "ref_tokens": totals[4],
            "failed_segments": totals[5],
        }),
    })
}

/// Encoded speakable tokens of every sentence.
fn sentence_ids(sd: &SentenceDoc, vocab: &Vocab) -> Vec<Vec<TokenId>> {
    sd.sentences
        .iter()
        .map(|s| s.speakable_tokens().map(|t| vocab.lookup(t)).collect())
        .collect()
}

fn flex_align_stage(cfg: &PipelineConfig, docs: &[String], out: &OutputPaths) -> Result<StageOutcome> {
    let vocab = Vocab::read(vocab_path(cfg))?;
    let per = per_doc(docs, |doc| {
        let (post_path, mut post) = read_doc_posteriors(cfg, &vocab, doc)?;
        if let Some(f) = cfg.flex.emission_floor {
            post = post.floored(f as f32);
        }
        let sd = read_sentences(out, doc)?;
        let regions: Vec<RegionPair> = read_jsonl(out.doc_file(doc, REGIONS))?;
        let wcfg = WindowConfig {
            skip_weight: cfg.flex.skip_weight,
            filler_weight: cfg.flex.filler_weight,
            beam: cfg.flex.beam,
            ..WindowConfig::from_seconds(cfg.flex.window_s, cfg.flex.overlap_s, post.hop_ms())
        };
        let candidates = if regions.is_empty() {
            tracing::warn!(doc, "no anchor regions; every window considers all sentences");
            None
        } else {
            Some(regions.as_slice())
        };
        let fa = flex_align_window(&post, &sentence_ids(&sd, &vocab), &wcfg, candidates)?;
        fa.check_invariants()?;
        let rows: Vec<AlignRow> = sd
            .sentences
            .iter()
            .zip(&fa.sentences)
            .map(|(s, st)| AlignRow::from_status(&s.sent_id, st, post.hop_ms()))
            .collect();
        let dest = out.doc_file(doc, ALIGN);
        write_jsonl(&dest, &rows)?;
        Ok((post_path, dest, fa.num_aligned(), fa.num_skipped()))
    })?;
    let mut inputs = vec![vocab_path(cfg)];
    let mut outputs = Vec::new();
    let (mut aligned, mut skipped) = (0, 0);
    for (i, o, a, s) in per {
        inputs.push(i);
        outputs.push(o);
        aligned += a;
        skipped += s;
    }
    Ok(StageOutcome {
        inputs,
        outputs,
        summary: json!({"aligned": aligned, "skipped": skipped}),
    })
}

fn read_genders(cfg: &PipelineConfig) -> Result<BTreeMap<String, Gender>> {
    let path = speakers_path(cfg);
    if !path.is_file() {
        return Ok(BTreeMap::new());
    }
    let rows: Vec<SpeakerRow> = read_jsonl(&path)?;
    Ok(rows.into_iter().map(|r| (r.speaker_id, r.gender)).collect())
}

fn utt_id(doc: &str, pair_index: usize) -> String {
    format!("{doc}_p{pair_index:05}")
}

fn read_align(out: &OutputPaths, doc: &str, hop_ms: u32) -> Result<Vec<SentenceStatus>> {
    let rows: Vec<AlignRow> = read_jsonl(out.doc_file(doc, ALIGN))?;
    rows.iter().map(|r| r.to_status(hop_ms)).collect()
}

/// Frame span covering the pair's source sentences, if all are aligned.
fn pair_span(statuses: &[SentenceStatus], pair: &AlignmentPair) -> Option<(usize, usize)> {
    let spans: Option<Vec<(usize, usize)>> = pair.src_range().map(|i| statuses.get(i)?.span()).collect();
    let spans = spans?;
    Some((spans.first()?.0, spans.last()?.1))
}

enum Candidate {
    Triplet(UtteranceManifestRow),
    Rejected(RejectedRow),
}

fn filter_stage(cfg: &PipelineConfig, docs: &[String], out: &OutputPaths) -> Result<StageOutcome> {
    let vocab = Vocab::read(vocab_path(cfg))?;
    let genders = read_genders(cfg)?;
    let per = per_doc(docs, |doc| {
        let p = doc_paths(&cfg.input_dir, doc);
        let hop_ms = read_posterior_hop(&p.posteriors)?;
        let sd = read_sentences(out, doc)?;
        let pairs: Vec<AlignmentPair> = read_jsonl(out.doc_file(doc, PAIRS))?;
        let statuses = read_align(out, doc, hop_ms)?;
        if statuses.len() != sd.sentences.len() {
            return Err(Error::UniverseMismatch(format!(
                "{} alignment rows for {} sentences",
                statuses.len(),
                sd.sentences.len()
            )));
        }
        let hyp: Vec<HypToken> = read_jsonl(out.doc_file(doc, HYP))?;
        let lines = translation_lines(&p.translation)?;
        let ids = sentence_ids(&sd, &vocab);
        let hop_s = hop_ms as f64 / 1000.0;
        let mut cands = Vec::new();
        for (k, pair) in pairs.iter().enumerate() {
            let reject = |reason: &str, quality| {
                Candidate::Rejected(RejectedRow {
                    utt_id: utt_id(doc, k),
                    doc_id: doc.to_string(),
                    pair_index: k,
                    reason: reason.to_string(),
                    quality,
                })
            };
            if pair.src_len == 0 || pair.tgt_len == 0 {
                cands.push(reject("unpaired", None));
                continue;
            }
            let Some((start, end)) = pair_span(&statuses, pair) else {
                cands.push(reject("unaligned", None));
                continue;
            };
            let reference: Vec<TokenId> = pair.src_range().flat_map(|i| ids[i].iter().copied()).collect();
            let in_span: Vec<TokenId> = hyp
                .iter()
                .filter(|h| {
                    let mid2 = h.start_frame + h.end_frame;
                    mid2 >= 2 * start && mid2 < 2 * end
                })
                .map(|h| h.token)
                .collect();
            let q = compute_stats(&in_span, &reference)?;
            if !cfg.filter.thresholds.accepts(&q) {
                cands.push(reject("quality", Some(q)));
                continue;
            }
            let first = &sd.sentences[pair.src_start];
            let src_ids: Vec<String> = pair.src_range().map(|i| sd.sentences[i].sent_id.clone()).collect();
            cands.push(Candidate::Triplet(UtteranceManifestRow {
                utt_id: utt_id(doc, k),
                doc_id: doc.to_string(),
                speaker_id: first.speaker_id.clone(),
                gender: genders.get(&first.speaker_id).copied().unwrap_or(Gender::U),
                duration_s: (end - start) as f64 * hop_s,
                start_s: start as f64 * hop_s,
                end_s: end as f64 * hop_s,
                text_src: pair.src_range().map(|i| sd.sentences[i].text.as_str()).collect(),
                text_tgt: lines
                    .get(pair.tgt_start..pair.tgt_start + pair.tgt_len)
                    .ok_or_else(|| Error::Format(format!("pair {k} runs past the translation")))?
                    .join(" "),
                quality: Some(q),
                provenance: Some(Provenance {
                    pair_index: k,
                    src_sent_ids: src_ids,
                    start_frame: start,
                    end_frame: end,
                }),
            }));
        }
        Ok((vec![p.posteriors, p.translation], cands))
    })?;
    let mut inputs = vec![vocab_path(cfg)];
    if speakers_path(cfg).is_file() {
        inputs.push(speakers_path(cfg));
    }
    let mut triplets = Vec::new();
    let mut rejected = Vec::new();
    for (i, cands) in per {
        inputs.extend(i);
        for c in cands {
            match c {
                Candidate::Triplet(t) => triplets.push(t),
                Candidate::Rejected(r) => rejected.push(r),
            }
        }
    }
    write_manifest(out.triplets(), &triplets)?;
    write_jsonl(out.rejected(), &rejected)?;

    let mut texts: BTreeMap<String, String> = BTreeMap::new();
    let mut scored: Vec<(String, f64)> = Vec::new();
    for t in &triplets {
        texts.insert(t.utt_id.clone(), t.text_src.clone());
        scored.push((t.utt_id.clone(), t.quality.expect("set above").cer));
    }
    for r in &rejected {
        if let Some(q) = r.quality {
            scored.push((r.utt_id.clone(), q.cer));
        }
    }
    scored.sort_by(|a, b| a.0.cmp(&b.0));
    let sheet: Vec<LabelSheetRow> = bin_sample(&scored, &cfg.filter.bin_edges, cfg.filter.per_bin, cfg.seed)?
        .into_iter()
        .map(|(bin, utt)| LabelSheetRow {
            text: texts.get(&utt).cloned().unwrap_or_default(),
            utt_id: utt,
            cer_bin: bin,
            label: None,
        })
        .collect();
    write_jsonl(out.label_sheet(), &sheet)?;

    let count = |reason: &str| rejected.iter().filter(|r| r.reason == reason).count();
    let hours: f64 = triplets.iter().map(|t| t.duration_s).sum::<f64>() / 3600.0;
    Ok(StageOutcome {
        inputs,
        outputs: vec![out.triplets(), out.rejected(), out.label_sheet()],
        summary: json!({
            "triplets": triplets.len(),
            "hours": hours,
            "rejected_unpaired": count("unpaired"),
            "rejected_unaligned": count("unaligned"),
            "rejected_quality": count("quality"),
            "label_sheet_rows": sheet.len(),
        }),
    })
}

fn split_stage(cfg: &PipelineConfig, out: &OutputPaths) -> Result<StageOutcome> {
    let rows = read_manifest(out.triplets())?;
    let sa = make_splits(&rows, &cfg.split.specs, cfg.seed, &cfg.split.config)?;
    write_json(out.assignment(), &sa)?;
    mkdir(&out.root.join("splits"))?;
    let mut outputs = vec![out.assignment()];
    for spec in &cfg.split.specs {
        let part: Vec<UtteranceManifestRow> = rows
            .iter()
            .filter(|r| sa.assignment.get(&r.doc_id) == Some(&spec.name))
            .cloned()
            .collect();
        let dest = out.split_file(&spec.name);
        write_manifest(&dest, &part)?;
        outputs.push(dest);
    }
    Ok(StageOutcome {
        inputs: Vec::new(),
        outputs,
        summary: serde_json::to_value(&sa.report).expect("report serializes"),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checked: usize,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Cross-checks every triplet against the kept bitext pairs, the flexible
/// alignment spans and the filter thresholds of `cfg`.
pub fn validate_run(cfg: &PipelineConfig) -> Result<ValidationReport> {
    let out = OutputPaths::new(&cfg.output_dir);
    let triplets = read_manifest(out.triplets())?;
    let mut report = ValidationReport::default();
    let mut by_doc: BTreeMap<&str, Vec<&UtteranceManifestRow>> = BTreeMap::new();
    for t in &triplets {
        by_doc.entry(t.doc_id.as_str()).or_default().push(t);
    }
    for (doc, rows) in by_doc {
        let hop_ms = read_posterior_hop(&doc_paths(&cfg.input_dir, doc).posteriors)?;
        let pairs: Vec<AlignmentPair> = read_jsonl(out.doc_file(doc, PAIRS))?;
        let sd = read_sentences(&out, doc)?;
        let statuses = read_align(&out, doc, hop_ms)?;
        for t in rows {
            report.checked += 1;
            let mut bad = |msg: String| report.problems.push(format!("{}: {msg}", t.utt_id));
            let Some(prov) = &t.provenance else {
                bad("no provenance".into());
                continue;
            };
            let Some(pair) = pairs.get(prov.pair_index) else {
                bad(format!("pair {} is not a kept bitext pair", prov.pair_index));
                continue;
            };
            if pair.cost > cfg.bitext.threshold {
                bad(format!("pair cost {} exceeds threshold {}", pair.cost, cfg.bitext.threshold));
            }
            let expect_ids: Vec<&str> = pair
                .src_range()
                .filter_map(|i| sd.sentences.get(i).map(|s| s.sent_id.as_str()))
                .collect();
            if expect_ids.len() != pair.src_len || prov.src_sent_ids.iter().map(String::as_str).ne(expect_ids) {
                bad("source sentence ids differ from the bitext pair".into());
            }
            match pair_span(&statuses, pair) {
                None => bad("source sentences are not all flex-aligned".into()),
                Some(span) if span != (prov.start_frame, prov.end_frame) => {
                    bad(format!("span {:?} differs from flex span {span:?}", (prov.start_frame, prov.end_frame)))
                }
                Some(_) => {}
            }
            match &t.quality {
                Some(q) if cfg.filter.thresholds.accepts(q) => {}
                Some(_) => bad("quality stats fail the filter thresholds".into()),
                None => bad("no quality stats".into()),
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEval {
    pub doc_id: String,
    pub score: AlignmentScore,
    /// Gold-spoken sentences whose span matches gold frame-exactly.
    pub exact_spans: usize,
    pub spoken: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub docs: Vec<DocEval>,
    pub mean_boundary_accuracy: f64,
    pub mean_skip_precision: f64,
    pub mean_skip_recall: f64,
}

/// Scores `align.jsonl` of every document that has gold in the bundle.
pub fn evaluate_run(bundle: &Path, output_dir: &Path, k_frames: usize) -> Result<EvalReport> {
    let out = OutputPaths::new(output_dir);
    let docs = super::discover_docs(bundle)?;
    let mut evals = Vec::new();
    for doc in docs {
        let gp = gold_path(bundle, &doc);
        if !gp.is_file() {
            continue;
        }
        let gold = read_gold(&gp)?;
        let hop_ms = read_posterior_hop(&doc_paths(bundle, &doc).posteriors)?;
        let pred = FlexAlignment {
            sentences: read_align(&out, &doc, hop_ms)?,
        };
        let score = score_alignment(&pred, &gold, k_frames).map_err(|e| e.context(format!("document {doc}")))?;
        let spoken = gold.iter().filter(|g| g.spoken).count();
        let exact_spans = gold
            .iter()
            .zip(&pred.sentences)
            .filter(|(g, p)| g.spoken && p.span() == Some((g.start_frame, g.end_frame)))
            .count();
        evals.push(DocEval {
            doc_id: doc,
            score,
            exact_spans,
            spoken,
        });
    }
    if evals.is_empty() {
        return Err(Error::EmptyInput("bundle has no gold alignments"));
    }
    let mean = |f: fn(&AlignmentScore) -> f64| evals.iter().map(|e| f(&e.score)).sum::<f64>() / evals.len() as f64;
    Ok(EvalReport {
        mean_boundary_accuracy: mean(|s| s.boundary_accuracy),
        mean_skip_precision: mean(|s| s.skip_precision),
        mean_skip_recall: mean(|s| s.skip_recall),
        docs: evals,
    })
}

/// Reads `assignment.json` written by the split stage.
pub fn read_assignment(path: impl AsRef<Path>) -> Result<SplitAssignment> {
    read_json(path)
}
