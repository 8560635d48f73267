//! First-pass alignment: edit-distance alignment of decoded text against the
//! transcript, anchor detection, and mapping anchors onto audio frames.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::viterbi_align;
use crate::error::{Error, Result};
use crate::lm::{lm_to_fsa, train_biased_vocab, LmConfig, NgramLM};
use crate::posterior::PosteriorMatrix;
use crate::textproc::SentenceDoc;
use crate::vocab::{TokenId, Vocab, BLANK_ID, UNK_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Match,
    Sub,
    /// Reference token with no hypothesis counterpart.
    Ins,
    /// Hypothesis token with no reference counterpart.
    Del,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditKind,
    pub hyp_index: Option<usize>,
    pub ref_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditCosts {
    pub sub: u32,
    pub ins: u32,
    pub del: u32,
}

impl Default for EditCosts {
    fn default() -> Self {
        Self {
            sub: 1,
            ins: 1,
            del: 1,
        }
    }
}

pub fn edit_cost(ops: &[EditOp], costs: EditCosts) -> u32 {
    ops.iter()
        .map(|op| match op.kind {
            EditKind::Match => 0,
            EditKind::Sub => costs.sub,
            EditKind::Ins => costs.ins,
            EditKind::Del => costs.del,
        })
        .sum()
}

/// Minimal-cost global alignment of `hyp` against `reference`.
///
/// Among equal-cost scripts the backtrace prefers match, then substitution,
/// then deletion, then insertion at every step (scanning from the end).
pub fn align_text<T: PartialEq>(hyp: &[T], reference: &[T], costs: EditCosts) -> Vec<EditOp> {
    let (n, m) = (hyp.len(), reference.len());
    let w = m + 1;
    let mut d = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        d[j] = j as u32 * costs.ins;
    }
    for i in 1..=n {
        d[i * w] = i as u32 * costs.del;
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + if hyp[i - 1] == reference[j - 1] { 0 } else { costs.sub };
            let up = d[(i - 1) * w + j] + costs.del;
            let left = d[i * w + j - 1] + costs.ins;
            d[i * w + j] = diag.min(up).min(left);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = hyp[i - 1] == reference[j - 1];
            let diag = d[(i - 1) * w + j - 1];
            if same && here == diag {
                ops.push(EditOp {
                    kind: EditKind::Match,
                    hyp_index: Some(i - 1),
                    ref_index: Some(j - 1),
                });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && here == diag + costs.sub {
                ops.push(EditOp {
                    kind: EditKind::Sub,
                    hyp_index: Some(i - 1),
                    ref_index: Some(j - 1),
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + costs.del {
            ops.push(EditOp {
                kind: EditKind::Del,
                hyp_index: Some(i - 1),
                ref_index: None,
            });
            i -= 1;
        } else {
            ops.push(EditOp {
                kind: EditKind::Ins,
                hyp_index: None,
                ref_index: Some(j - 1),
            });
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorCriteria {
    pub max_cer: f64,
    pub max_consec: usize,
    pub max_abs: usize,
    pub min_len: usize,
}

impl Default for AnchorCriteria {
    fn default() -> Self {
        Self {
            max_cer: 0.2,
            max_consec: 4,
            max_abs: 8,
            min_len: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub cer: f64,
    pub max_consecutive_errors: usize,
    pub abs_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// Half-open range into the edit script.
    pub op_span: (usize, usize),
    /// Half-open hypothesis token range.
    pub hyp_span: (usize, usize),
    /// Half-open reference token range.
    pub ref_span: (usize, usize),
    pub stats: RegionStats,
}

impl AnchorCriteria {
    fn accepts(&self, s: &RegionStats) -> bool {
        s.cer <= self.max_cer && s.max_consecutive_errors <= self.max_consec && s.abs_errors <= self.max_abs
    }
}

/// Left-to-right maximal anchors. A region qualifies when it starts and ends
/// on a match, spans at least `min_len` ops (or the whole script, if shorter)
/// and meets every criterion. From each start the longest qualifying region is
/// taken, and scanning resumes after it.
pub fn find_anchors(ops: &[EditOp], criteria: &AnchorCriteria) -> Vec<Anchor> {
    let n = ops.len();
    let min_len = criteria.min_len.min(n).max(1);
    let is_match = |k: usize| ops[k].kind == EditKind::Match;
    let mut anchors = Vec::new();
    let mut i = 0;
    while i < n {
        if !is_match(i) {
            i += 1;
            continue;
        }
        let (mut errors, mut refs, mut run, mut max_run) = (0usize, 0usize, 0usize, 0usize);
        let mut best: Option<(usize, RegionStats)> = None;
        for j in i..n {
            let op = ops[j];
            if op.ref_index.is_some() {
                refs += 1;
            }
            if op.kind == EditKind::Match {
                run = 0;
            } else {
                errors += 1;
                run += 1;
                max_run = max_run.max(run);
            }
            // Both counters only grow with the region.
            if errors > criteria.max_abs || max_run > criteria.max_consec {
                break;
            }
            if j + 1 - i >= min_len && is_match(j) {
                let stats = RegionStats {
                    cer: errors as f64 / refs as f64,
                    max_consecutive_errors: max_run,
                    abs_errors: errors,
                };
                if criteria.accepts(&stats) {
                    best = Some((j + 1, stats));
                }
            }
        }
        match best {
            Some((end, stats)) => {
                anchors.push(make_anchor(ops, i, end, stats));
                i = end;
            }
            None => i += 1,
        }
    }
    anchors
}

fn make_anchor(ops: &[EditOp], start: usize, end: usize, stats: RegionStats) -> Anchor {
    let span = |f: fn(&EditOp) -> Option<usize>| {
        let idx: Vec<usize> = ops[start..end].iter().filter_map(f).collect();
        (idx[0], idx[idx.len() - 1] + 1)
    };
    Anchor {
        op_span: (start, end),
        hyp_span: span(|o| o.hyp_index),
        ref_span: span(|o| o.ref_index),
        stats,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPair {
    /// Half-open frame range on the recording timeline.
    pub start_frame: usize,
    pub end_frame: usize,
    /// Half-open sentence index range.
    pub sent_start: usize,
    pub sent_end: usize,
}

/// Maps anchors to audio through per-token frame spans (`hyp_spans`, half-open)
/// and to sentences through `ref_sentence_of` (reference token -> sentence).
/// Both sides are widened by `expand_tokens`, clamped to the available tokens.
pub fn map_anchors_to_audio(
    anchors: &[Anchor],
    hyp_spans: &[(usize, usize)],
    ref_sentence_of: &[usize],
    expand_tokens: usize,
) -> Result<Vec<RegionPair>> {
    let mut out = Vec::with_capacity(anchors.len());
    for a in anchors {
        if let Some(missing) = (a.hyp_span.0..a.hyp_span.1).find(|&k| k >= hyp_spans.len()) {
            return Err(Error::MissingTiming { index: missing });
        }
        if a.ref_span.1 > ref_sentence_of.len() {
            return Err(Error::Format(format!(
                "anchor reference span ends at {} beyond {} tokens",
                a.ref_span.1,
                ref_sentence_of.len()
            )));
        }
        let hs = a.hyp_span.0.saturating_sub(expand_tokens);
        let he = (a.hyp_span.1 + expand_tokens).min(hyp_spans.len());
        let rs = a.ref_span.0.saturating_sub(expand_tokens);
        let re = (a.ref_span.1 + expand_tokens).min(ref_sentence_of.len());
        out.push(RegionPair {
            start_frame: hyp_spans[hs].0,
            end_frame: hyp_spans[he - 1].1,
            sent_start: ref_sentence_of[rs],
            sent_end: ref_sentence_of[re - 1] + 1,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FirstPassConfig {
    pub lm: LmConfig,
    pub criteria: AnchorCriteria,
    pub expand_tokens: usize,
    /// Decoder beam; `None` searches exactly.
    pub beam: Option<f64>,
}

impl Default for FirstPassConfig {
    fn default() -> Self {
        Self {
            lm: LmConfig::default(),
            criteria: AnchorCriteria::default(),
            expand_tokens: 2,
            beam: Some(12.0),
        }
    }
}

/// A decoded token placed on the recording timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypToken {
    pub token: TokenId,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstPassOutput {
    pub hyp: Vec<HypToken>,
    pub anchors: Vec<Anchor>,
    pub regions: Vec<RegionPair>,
    /// Start frames of segments that had no decoding path.
    pub failed_segments: Vec<usize>,
}

/// Speakable tokens of every sentence, per sentence.
pub fn sentence_tokens(doc: &SentenceDoc) -> Vec<Vec<String>> {
    doc.sentences
        .iter()
        .map(|s| s.speakable_tokens().map(str::to_string).collect())
        .collect()
}

/// Document-biased LM over the full model vocabulary.
pub fn train_doc_lm(doc: &SentenceDoc, vocab: &Vocab, background: &[Vec<String>], cfg: &LmConfig) -> Result<NgramLM> {
    let extra: Vec<&str> = vocab
        .tokens()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i as TokenId != BLANK_ID && i as TokenId != UNK_ID)
        .map(|(_, t)| t.as_str())
        .collect();
    train_biased_vocab(&sentence_tokens(doc), background, &extra, cfg)
}

/// Decodes each segment (`(start_frame, posteriors)`, time-ordered) against
/// the document-biased LM, aligns the concatenated hypothesis with the
/// transcript, and maps anchors to audio regions.
pub fn first_pass(
    segments: &[(usize, PosteriorMatrix)],
    doc: &SentenceDoc,
    vocab: &Vocab,
    lm: &NgramLM,
    cfg: &FirstPassConfig,
) -> Result<FirstPassOutput> {
    if let Some(i) = segments.windows(2).position(|w| w[1].0 < w[0].0 + w[0].1.frames()) {
        return Err(Error::Order { index: i + 1 });
    }
    let graph = lm_to_fsa(lm, vocab);
    let decoded: Vec<Result<Option<Vec<HypToken>>>> = segments
        .par_iter()
        .map(|(offset, post)| match viterbi_align(post, &graph, cfg.beam) {
            Ok(r) => Ok(Some(
                r.labels
                    .iter()
                    .zip(&r.spans)
                    .map(|(&token, &(a, b))| HypToken {
                        token,
                        start_frame: a + offset,
                        end_frame: b + offset,
                    })
                    .collect(),
            )),
            Err(Error::NoPath) => {
                tracing::warn!(segment_start = offset, "first pass: no path through segment");
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect();
    let mut hyp = Vec::new();
    let mut failed_segments = Vec::new();
    for (r, (offset, _)) in decoded.into_iter().zip(segments) {
        match r? {
            Some(toks) => hyp.extend(toks),
            None => failed_segments.push(*offset),
        }
    }

    let mut reference: Vec<TokenId> = Vec::new();
    let mut ref_sentence_of: Vec<usize> = Vec::new();
    for (i, toks) in sentence_tokens(doc).iter().enumerate() {
        reference.extend(vocab.encode(toks));
        ref_sentence_of.extend(std::iter::repeat(i).take(toks.len()));
    }
    let hyp_ids: Vec<TokenId> = hyp.iter().map(|h| h.token).collect();
    let ops = align_text(&hyp_ids, &reference, EditCosts::default());
    let anchors = find_anchors(&ops, &cfg.criteria);
    let spans: Vec<(usize, usize)> = hyp.iter().map(|h| (h.start_frame, h.end_frame)).collect();
    let regions = map_anchors_to_audio(&anchors, &spans, &ref_sentence_of, cfg.expand_tokens)?;
    Ok(FirstPassOutput {
        hyp,
        anchors,
        regions,
        failed_segments,
    })
}
