//! Frame-level Viterbi alignment of CTC posteriors against a graph, the
//! flexible (skippable) sentence graph, factor transducers and sliding-window
//! flexible alignment.
//!
//! The search space is the CTC topology composed with the graph: a path emits
//! a graph label for a run of one or more frames, optional blank frames sit
//! between labels, and two consecutive equal labels need a blank between them.
//! The score is the sum of frame log-posteriors plus the graph weights of the
//! traversed arcs (epsilon arcs included) plus the final weight.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchor::RegionPair;
use crate::error::{Error, Result};
use crate::fsa::{Fsa, StateId};
use crate::posterior::PosteriorMatrix;
use crate::vocab::{TokenId, BLANK_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub labels: Vec<TokenId>,
    /// Half-open frame range of each label.
    pub spans: Vec<(usize, usize)>,
    /// Graph arc that emitted each label.
    pub arcs: Vec<usize>,
    pub total_logprob: f64,
}

/// Product state: `2 * arc` while emitting that arc's label, `2 * state + 1`
/// while emitting blank at a graph state.
type Ps = u64;
const START: Ps = u64::MAX;

fn ps_arc(arc: usize) -> Ps {
    (arc as u64) << 1
}

fn ps_blank(state: StateId) -> Ps {
    ((state as u64) << 1) | 1
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    score: f64,
    origin: Ps,
}

const NONE_ENTRY: Entry = Entry {
    score: f64::NEG_INFINITY,
    origin: START,
};

/// Best ways to stand at a graph state between two frames: the best arrival
/// after a blank (or at the start), and the two best arrivals after label
/// frames with distinct labels. Two suffice to answer "best arrival whose last
/// label differs from x" for any x.
#[derive(Debug, Clone, Copy)]
struct Position {
    blank: Entry,
    l1: (Entry, TokenId),
    l2: (Entry, TokenId),
}

const EMPTY_POS: Position = Position {
    blank: NONE_ENTRY,
    l1: (NONE_ENTRY, BLANK_ID),
    l2: (NONE_ENTRY, BLANK_ID),
};

impl Position {
    fn insert(&mut self, label: Option<TokenId>, e: Entry) -> bool {
        match label {
            None => {
                if e.score > self.blank.score {
                    self.blank = e;
                    return true;
                }
                false
            }
            Some(l) => {
                if self.l1.0.score > f64::NEG_INFINITY && self.l1.1 == l {
                    if e.score > self.l1.0.score {
                        self.l1.0 = e;
                        return true;
                    }
                    false
                } else if self.l2.0.score > f64::NEG_INFINITY && self.l2.1 == l {
                    if e.score > self.l2.0.score {
                        self.l2.0 = e;
                        if self.l2.0.score > self.l1.0.score {
                            std::mem::swap(&mut self.l1, &mut self.l2);
                        }
                        return true;
                    }
                    false
                } else if e.score > self.l1.0.score {
                    self.l2 = self.l1;
                    self.l1 = (e, l);
                    true
                } else if e.score > self.l2.0.score {
                    self.l2 = (e, l);
                    true
                } else {
                    false
                }
            }
        }
    }

    fn best_any(&self) -> Entry {
        if self.l1.0.score >= self.blank.score {
            self.l1.0
        } else {
            self.blank
        }
    }

    /// Best arrival from which `label` may start a new token.
    fn allowed(&self, label: TokenId) -> Entry {
        let lab = if self.l1.1 != label { self.l1.0 } else { self.l2.0 };
        if lab.score >= self.blank.score {
            lab
        } else {
            self.blank
        }
    }
}

/// Graph preprocessed for search.
struct Prepared<'a> {
    fsa: &'a Fsa,
    /// Labeled out-arcs per state sorted by label.
    out_labeled: Vec<Vec<(TokenId, usize)>>,
    out_eps: Vec<Vec<usize>>,
    /// Processing priority under epsilon arcs (topological rank when acyclic).
    rank: Vec<u32>,
}

impl<'a> Prepared<'a> {
    fn new(fsa: &'a Fsa, vocab_size: usize) -> Result<Self> {
        fsa.validate(Some(vocab_size))?;
        let n = fsa.num_states;
        let mut out_labeled = vec![Vec::new(); n];
        let mut out_eps = vec![Vec::new(); n];
        for (i, a) in fsa.arcs.iter().enumerate() {
            match a.label {
                Some(l) => out_labeled[a.src as usize].push((l, i)),
                None => out_eps[a.src as usize].push(i),
            }
        }
        for v in &mut out_labeled {
            v.sort_unstable();
        }
        let mut rank = vec![0u32; n];
        match fsa.epsilon_topo_order() {
            Some(order) => {
                for (r, s) in order.into_iter().enumerate() {
                    rank[s as usize] = r as u32;
                }
            }
            None => {
                check_no_positive_eps_cycle(fsa)?;
                for (s, r) in rank.iter_mut().enumerate() {
                    *r = s as u32;
                }
            }
        }
        Ok(Self {
            fsa,
            out_labeled,
            out_eps,
            rank,
        })
    }
}

fn check_no_positive_eps_cycle(fsa: &Fsa) -> Result<()> {
    let n = fsa.num_states;
    let mut dist = vec![0.0f64; n];
    for _ in 0..=n {
        let mut changed = false;
        for a in fsa.arcs.iter().filter(|a| a.label.is_none()) {
            let cand = dist[a.src as usize] + a.weight;
            if cand > dist[a.dst as usize] + 1e-12 {
                dist[a.dst as usize] = cand;
                changed = true;
            }
        }
        if !changed {
            return Ok(());
        }
    }
    Err(Error::InvalidGraph("positive-weight epsilon cycle".into()))
}

/// Sparse per-state position table reused across frames.
struct Positions {
    pos: Vec<Position>,
    stamp: Vec<u32>,
    active: Vec<StateId>,
    gen: u32,
    queued: Vec<bool>,
    heap: BinaryHeap<std::cmp::Reverse<(u32, StateId)>>,
}

impl Positions {
    fn new(n: usize) -> Self {
        Self {
            pos: vec![EMPTY_POS; n],
            stamp: vec![0; n],
            active: Vec::new(),
            gen: 0,
            queued: vec![false; n],
            heap: BinaryHeap::new(),
        }
    }

    fn clear(&mut self) {
        self.gen += 1;
        self.active.clear();
    }

    fn slot(&mut self, s: StateId) -> &mut Position {
        let i = s as usize;
        if self.stamp[i] != self.gen {
            self.stamp[i] = self.gen;
            self.pos[i] = EMPTY_POS;
            self.active.push(s);
        }
        &mut self.pos[i]
    }

    fn insert(&mut self, s: StateId, label: Option<TokenId>, e: Entry) {
        self.slot(s).insert(label, e);
    }

    /// Propagates all entries along epsilon arcs until nothing improves.
    fn close(&mut self, g: &Prepared) {
        let seeds: Vec<StateId> = self
            .active
            .iter()
            .copied()
            .filter(|&s| !g.out_eps[s as usize].is_empty())
            .collect();
        for s in seeds {
            if !self.queued[s as usize] {
                self.queued[s as usize] = true;
                self.heap.push(std::cmp::Reverse((g.rank[s as usize], s)));
            }
        }
        while let Some(std::cmp::Reverse((_, s))) = self.heap.pop() {
            self.queued[s as usize] = false;
            let p = self.pos[s as usize];
            for &ai in &g.out_eps[s as usize] {
                let a = &g.fsa.arcs[ai];
                let shift = |e: Entry| Entry {
                    score: e.score + a.weight,
                    origin: e.origin,
                };
                let d = a.dst;
                let slot = self.slot(d);
                let mut changed = false;
                if p.blank.score > f64::NEG_INFINITY {
                    changed |= slot.insert(None, shift(p.blank));
                }
                if p.l1.0.score > f64::NEG_INFINITY {
                    changed |= slot.insert(Some(p.l1.1), shift(p.l1.0));
                }
                if p.l2.0.score > f64::NEG_INFINITY {
                    changed |= slot.insert(Some(p.l2.1), shift(p.l2.0));
                }
                if changed && !g.out_eps[d as usize].is_empty() && !self.queued[d as usize] {
                    self.queued[d as usize] = true;
                    self.heap.push(std::cmp::Reverse((g.rank[d as usize], d)));
                }
            }
        }
    }
}

/// Dense score table over product states of one kind, reset per frame.
struct Layer {
    score: Vec<f64>,
    bp: Vec<Ps>,
    stamp: Vec<u32>,
    active: Vec<usize>,
    gen: u32,
}

impl Layer {
    fn new(n: usize) -> Self {
        Self {
            score: vec![f64::NEG_INFINITY; n],
            bp: vec![START; n],
            stamp: vec![0; n],
            active: Vec::new(),
            gen: 0,
        }
    }

    fn clear(&mut self) {
        self.gen += 1;
        self.active.clear();
    }

    fn offer(&mut self, i: usize, score: f64, bp: Ps) {
        if self.stamp[i] != self.gen {
            self.stamp[i] = self.gen;
            self.score[i] = f64::NEG_INFINITY;
            self.active.push(i);
        }
        if score > self.score[i] {
            self.score[i] = score;
            self.bp[i] = bp;
        }
    }
}

/// Best CTC path through `graph`. `beam` prunes product states scoring more
/// than `beam` below the frame's best and skips labels whose emission is more
/// than `beam` below the frame's best emission; without it the search is exact.
pub fn viterbi_align(post: &PosteriorMatrix, graph: &Fsa, beam: Option<f64>) -> Result<DecodeResult> {
    let t_max = post.frames();
    if t_max == 0 {
        return Err(Error::EmptyInput("posterior matrix has no frames"));
    }
    let g = Prepared::new(graph, post.vocab_size())?;
    let n_states = graph.num_states;
    let mut positions = Positions::new(n_states);
    let mut a_layer = Layer::new(graph.arcs.len());
    let mut b_layer = Layer::new(n_states);
    let mut prev_a: Vec<(usize, f64)> = Vec::new();
    let mut prev_b: Vec<(StateId, f64)> = Vec::new();
    // Per frame: (product state, predecessor) sorted by product state.
    let mut backptrs: Vec<Vec<(Ps, Ps)>> = Vec::with_capacity(t_max);
    let mut candidates: Vec<TokenId> = Vec::new();

    for t in 0..t_max {
        let row = post.row(t);
        build_positions(&mut positions, &g, t == 0, &prev_a, &prev_b);

        a_layer.clear();
        b_layer.clear();
        for &(ai, s) in &prev_a {
            a_layer.offer(ai, s, ps_arc(ai));
        }
        if let Some(bw) = beam {
            let best = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            candidates.clear();
            candidates.extend(
                (1..row.len())
                    .filter(|&l| row[l] as f64 >= best - bw)
                    .map(|l| l as TokenId),
            );
        }
        for &s in &positions.active {
            let p = positions.pos[s as usize];
            let any = p.best_any();
            if any.score == f64::NEG_INFINITY {
                continue;
            }
            b_layer.offer(s as usize, any.score, any.origin);
            let out = &g.out_labeled[s as usize];
            let mut expand = |label: TokenId, ai: usize| {
                let e = p.allowed(label);
                if e.score > f64::NEG_INFINITY {
                    a_layer.offer(ai, e.score + graph.arcs[ai].weight, e.origin);
                }
            };
            if beam.is_some() && candidates.len() * 4 < out.len() {
                for &l in &candidates {
                    let lo = out.partition_point(|&(x, _)| x < l);
                    for &(x, ai) in &out[lo..] {
                        if x != l {
                            break;
                        }
                        expand(x, ai);
                    }
                }
            } else {
                for &(l, ai) in out {
                    if beam.is_some() && candidates.binary_search(&l).is_err() {
                        continue;
                    }
                    expand(l, ai);
                }
            }
        }

        prev_a.clear();
        prev_b.clear();
        let blank_e = row[BLANK_ID as usize] as f64;
        let mut frame_best = f64::NEG_INFINITY;
        for &ai in &a_layer.active {
            let s = a_layer.score[ai] + row[graph.arcs[ai].label.unwrap_or(BLANK_ID) as usize] as f64;
            if s > f64::NEG_INFINITY {
                prev_a.push((ai, s));
                frame_best = frame_best.max(s);
            }
        }
        for &si in &b_layer.active {
            let s = b_layer.score[si] + blank_e;
            if s > f64::NEG_INFINITY {
                prev_b.push((si as StateId, s));
                frame_best = frame_best.max(s);
            }
        }
        if let Some(bw) = beam {
            prev_a.retain(|&(_, s)| s >= frame_best - bw);
            prev_b.retain(|&(_, s)| s >= frame_best - bw);
        }
        if prev_a.is_empty() && prev_b.is_empty() {
            return Err(Error::NoPath);
        }
        let mut bp: Vec<(Ps, Ps)> = Vec::with_capacity(prev_a.len() + prev_b.len());
        bp.extend(prev_a.iter().map(|&(ai, _)| (ps_arc(ai), a_layer.bp[ai])));
        bp.extend(prev_b.iter().map(|&(si, _)| (ps_blank(si), b_layer.bp[si as usize])));
        bp.sort_unstable_by_key(|&(k, _)| k);
        backptrs.push(bp);
    }

    build_positions(&mut positions, &g, false, &prev_a, &prev_b);
    let mut best = NONE_ENTRY;
    for (&f, &w) in &graph.finals {
        if positions.stamp[f as usize] != positions.gen {
            continue;
        }
        let e = positions.pos[f as usize].best_any();
        let s = e.score + w;
        if s > best.score {
            best = Entry {
                score: s,
                origin: e.origin,
            };
        }
    }
    if best.score == f64::NEG_INFINITY {
        return Err(Error::NoPath);
    }

    let mut path = vec![START; t_max];
    let mut cur = best.origin;
    for t in (0..t_max).rev() {
        path[t] = cur;
        let bp = &backptrs[t];
        let i = bp
            .binary_search_by_key(&cur, |&(k, _)| k)
            .expect("backpointer for a surviving state");
        cur = bp[i].1;
    }

    let mut result = DecodeResult {
        labels: Vec::new(),
        spans: Vec::new(),
        arcs: Vec::new(),
        total_logprob: best.score,
    };
    for t in 0..t_max {
        let ps = path[t];
        if ps & 1 == 1 {
            continue;
        }
        let ai = (ps >> 1) as usize;
        if t > 0 && path[t - 1] == ps {
            result.spans.last_mut().expect("open span").1 = t + 1;
        } else {
            result.labels.push(graph.arcs[ai].label.expect("labeled arc"));
            result.arcs.push(ai);
            result.spans.push((t, t + 1));
        }
    }
    Ok(result)
}

fn build_positions(
    positions: &mut Positions,
    g: &Prepared,
    initial: bool,
    prev_a: &[(usize, f64)],
    prev_b: &[(StateId, f64)],
) {
    positions.clear();
    if initial {
        positions.insert(g.fsa.start, None, Entry { score: 0.0, origin: START });
    } else {
        for &(si, s) in prev_b {
            positions.insert(si, None, Entry { score: s, origin: ps_blank(si) });
        }
        for &(ai, s) in prev_a {
            let a = &g.fsa.arcs[ai];
            positions.insert(a.dst, a.label, Entry { score: s, origin: ps_arc(ai) });
        }
    }
    positions.close(g);
}

pub const DEFAULT_SKIP_WEIGHT: f64 = -8.0;

/// Per-frame log-probability floor applied to posteriors before flexible
/// alignment. Without it a single transcript token the acoustic model gives
/// zero probability leaves no path through the whole window.
pub const DEFAULT_EMISSION_FLOOR: f64 = -20.0;

/// Linear sentence chain with one epsilon skip arc per sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexGraph {
    pub fsa: Fsa,
    /// Sentence owning each arc; `None` for skip and filler arcs.
    pub arc_sentence: Vec<Option<usize>>,
    /// Chain state where each sentence starts; one extra entry for the end.
    pub boundaries: Vec<StateId>,
}

impl FlexGraph {
    pub fn num_sentences(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Adds a self-loop for every token in `fillers` at `state`, weight `w`.
    pub fn add_fillers(&mut self, state: StateId, fillers: &[TokenId], w: f64) {
        for &l in fillers {
            self.fsa.add_arc(state, state, Some(l), w);
            self.arc_sentence.push(None);
        }
    }
}

/// States `1 + sum(L_i)`, arcs `sum(L_i) + N`: each sentence's token arcs
/// followed by its skip arc from the sentence's first to last state.
pub fn build_flexible_graph(sentences: &[Vec<TokenId>], skip_weight: f64) -> Result<FlexGraph> {
    if sentences.is_empty() {
        return Err(Error::EmptyInput("no sentences for the flexible graph"));
    }
    if sentences.iter().any(Vec::is_empty) {
        return Err(Error::EmptyInput("flexible graph sentence without tokens"));
    }
    let total: usize = sentences.iter().map(Vec::len).sum();
    let mut fsa = Fsa::new(total + 1, 0);
    let mut arc_sentence = Vec::with_capacity(total + sentences.len());
    let mut boundaries = Vec::with_capacity(sentences.len() + 1);
    let mut s: StateId = 0;
    for (i, sent) in sentences.iter().enumerate() {
        let begin = s;
        boundaries.push(begin);
        for &tok in sent {
            fsa.add_arc(s, s + 1, Some(tok), 0.0);
            arc_sentence.push(Some(i));
            s += 1;
        }
        fsa.add_arc(begin, s, None, skip_weight);
        arc_sentence.push(None);
    }
    boundaries.push(s);
    fsa.set_final(s, 0.0);
    Ok(FlexGraph {
        fsa,
        arc_sentence,
        boundaries,
    })
}

/// Linear acceptor over the concatenated tokens that accepts any contiguous
/// factor: epsilon arcs from the start to every later state, all states final.
pub fn build_factor_transducer(sentences: &[Vec<TokenId>], entry_weight: f64) -> Result<Fsa> {
    let tokens: Vec<TokenId> = sentences.iter().flatten().copied().collect();
    if tokens.is_empty() {
        return Err(Error::EmptyInput("no tokens for the factor transducer"));
    }
    let n = tokens.len();
    let mut fsa = Fsa::new(n + 1, 0);
    for (i, &tok) in tokens.iter().enumerate() {
        fsa.add_arc(i as StateId, i as StateId + 1, Some(tok), 0.0);
    }
    for s in 1..=n as StateId {
        fsa.add_arc(0, s, None, entry_weight);
    }
    for s in 0..=n as StateId {
        fsa.set_final(s, 0.0);
    }
    Ok(fsa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum SentenceStatus {
    Aligned {
        start_frame: usize,
        end_frame: usize,
        /// Geometric-mean frame posterior of the emitted labels over the span.
        conf: f64,
    },
    Skipped,
}

impl SentenceStatus {
    pub fn span(&self) -> Option<(usize, usize)> {
        match *self {
            SentenceStatus::Aligned {
                start_frame,
                end_frame,
                ..
            } => Some((start_frame, end_frame)),
            SentenceStatus::Skipped => None,
        }
    }

    pub fn is_aligned(&self) -> bool {
        self.span().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexAlignment {
    pub sentences: Vec<SentenceStatus>,
}

impl FlexAlignment {
    pub fn num_aligned(&self) -> usize {
        self.sentences.iter().filter(|s| s.is_aligned()).count()
    }

    pub fn num_skipped(&self) -> usize {
        self.sentences.len() - self.num_aligned()
    }

    /// Aligned spans are non-empty, increasing and non-overlapping in sentence order.
    pub fn check_invariants(&self) -> Result<()> {
        let mut last_end = 0;
        for (i, s) in self.sentences.iter().enumerate() {
            if let Some((a, b)) = s.span() {
                if a >= b || a < last_end {
                    return Err(Error::Order { index: i });
                }
                last_end = b;
            }
        }
        Ok(())
    }
}

/// Sentence statuses from a decode over a flexible graph. Frame offsets in
/// `result` are shifted by `offset`.
fn statuses_from_decode(
    graph: &FlexGraph,
    sentence_ids: &[usize],
    post: &PosteriorMatrix,
    result: &DecodeResult,
    offset: usize,
    out: &mut [SentenceStatus],
) {
    let mut first: Vec<Option<usize>> = vec![None; graph.num_sentences()];
    let mut last: Vec<usize> = vec![0; graph.num_sentences()];
    let mut logp: Vec<f64> = vec![0.0; graph.num_sentences()];
    for (k, &ai) in result.arcs.iter().enumerate() {
        if let Some(i) = graph.arc_sentence[ai] {
            let (a, b) = result.spans[k];
            first[i].get_or_insert(k);
            last[i] = k;
            let l = result.labels[k] as usize;
            logp[i] += (a..b).map(|t| post.get(t, l) as f64).sum::<f64>();
        }
    }
    for i in 0..graph.num_sentences() {
        if let Some(f) = first[i] {
            let start = result.spans[f].0;
            let end = result.spans[last[i]].1;
            let frames: usize = (f..=last[i]).map(|k| result.spans[k].1 - result.spans[k].0).sum();
            out[sentence_ids[i]] = SentenceStatus::Aligned {
                start_frame: start + offset,
                end_frame: end + offset,
                conf: (logp[i] / frames as f64).exp(),
            };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub len_frames: usize,
    pub overlap_frames: usize,
    pub skip_weight: f64,
    /// Weight of each filler token absorbing audio cut off at an interior
    /// window edge. Cheaper fillers than a mismatched transcript token let a
    /// window swallow whole noisy sentences instead of aligning them.
    pub filler_weight: f64,
    /// Skip arcs charge their weight at the frame the skip is taken, so a
    /// beam narrower than the skips a window needs prunes the right path
    /// before its first token.
    pub beam: Option<f64>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        // 60 s / 20 s at a 40 ms hop.
        Self {
            len_frames: 1500,
            overlap_frames: 500,
            skip_weight: DEFAULT_SKIP_WEIGHT,
            filler_weight: DEFAULT_EMISSION_FLOOR,
            beam: None,
        }
    }
}

impl WindowConfig {
    pub fn from_seconds(window_s: f64, overlap_s: f64, hop_ms: u32) -> Self {
        let frames = |s: f64| (s * 1000.0 / hop_ms as f64).round() as usize;
        Self {
            len_frames: frames(window_s),
            overlap_frames: frames(overlap_s),
            ..Self::default()
        }
    }
}

/// Whole-utterance flexible alignment: one decode over all sentences.
/// Sentences without tokens are reported skipped.
pub fn flex_align(
    post: &PosteriorMatrix,
    sentences: &[Vec<TokenId>],
    skip_weight: f64,
    beam: Option<f64>,
) -> Result<FlexAlignment> {
    let mut out = vec![SentenceStatus::Skipped; sentences.len()];
    let ids: Vec<usize> = (0..sentences.len()).filter(|&i| !sentences[i].is_empty()).collect();
    if ids.is_empty() {
        return Ok(FlexAlignment { sentences: out });
    }
    let subset: Vec<Vec<TokenId>> = ids.iter().map(|&i| sentences[i].clone()).collect();
    let graph = build_flexible_graph(&subset, skip_weight)?;
    let result = viterbi_align(post, &graph.fsa, beam)?;
    statuses_from_decode(&graph, &ids, post, &result, 0, &mut out);
    Ok(FlexAlignment { sentences: out })
}

/// Window start frames: stride `len - overlap`, the last window ends at `frames`.
pub fn window_starts(frames: usize, len: usize, overlap: usize) -> Vec<usize> {
    let mut starts = vec![0];
    let stride = len - overlap;
    while starts.last().unwrap() + len < frames {
        starts.push(starts.last().unwrap() + stride);
    }
    starts
}

struct WindowOutput {
    /// Frames the window explained without fillers.
    start: usize,
    end: usize,
    statuses: Vec<(usize, SentenceStatus)>,
}

/// Sliding-window flexible alignment.
///
/// Each window decodes a flexible graph over its candidate sentences, or over
/// every sentence when `candidates` is `None`. Candidates are the contiguous
/// index range covering the regions that intersect the window and the
/// unanchored sentences between them and the nearest region wholly before
/// and wholly after the window; unanchored sentences are otherwise unreachable. At window
/// edges inside the recording, filler self-loops on the first/last chain state
/// absorb audio of sentences cut by the edge. A sentence takes its span from
/// the window where the span midpoint lies farthest from the edges of the
/// audio the window explained without fillers, the earlier window on ties; spans that would break monotonicity against an
/// already accepted earlier sentence are dropped.
pub fn flex_align_window(
    post: &PosteriorMatrix,
    sentences: &[Vec<TokenId>],
    cfg: &WindowConfig,
    candidates: Option<&[RegionPair]>,
) -> Result<FlexAlignment> {
    if cfg.len_frames == 0 || cfg.overlap_frames >= cfg.len_frames {
        return Err(Error::Config(format!(
            "window length {} must exceed overlap {}",
            cfg.len_frames, cfg.overlap_frames
        )));
    }
    let frames = post.frames();
    if frames == 0 {
        return Err(Error::EmptyInput("posterior matrix has no frames"));
    }
    let starts = window_starts(frames, cfg.len_frames, cfg.overlap_frames);
    let fillers: Vec<TokenId> = (1..post.vocab_size() as TokenId).collect();

    let run = |&ws: &usize| -> Result<Option<WindowOutput>> {
        let we = (ws + cfg.len_frames).min(frames);
        let range = match candidates {
            None => Some((0, sentences.len())),
            Some(regions) => {
                let before = regions.iter().filter(|r| r.end_frame <= ws).map(|r| r.sent_end).max();
                let after = regions.iter().filter(|r| r.start_frame >= we).map(|r| r.sent_start).min();
                let (lo, hi) = regions
                    .iter()
                    .filter(|r| r.start_frame < we && r.end_frame > ws)
                    .fold((before.unwrap_or(0), after.unwrap_or(sentences.len())), |(a, b), r| {
                        (a.min(r.sent_start), b.max(r.sent_end))
                    });
                (lo < hi).then_some((lo, hi))
            }
        };
        let Some((lo, hi)) = range else {
            return Ok(None);
        };
        let ids: Vec<usize> = (lo..hi.min(sentences.len()))
            .filter(|&i| !sentences[i].is_empty())
            .collect();
        if ids.is_empty() {
            return Ok(None);
        }
        let subset: Vec<Vec<TokenId>> = ids.iter().map(|&i| sentences[i].clone()).collect();
        let mut graph = build_flexible_graph(&subset, cfg.skip_weight)?;
        if ws > 0 {
            graph.add_fillers(graph.fsa.start, &fillers, cfg.filler_weight);
        }
        if we < frames {
            let end = *graph.boundaries.last().unwrap();
            graph.add_fillers(end, &fillers, cfg.filler_weight);
        }
        let local = post.slice(ws, we)?;
        let result = match viterbi_align(&local, &graph.fsa, cfg.beam) {
            Ok(r) => r,
            Err(Error::NoPath) => {
                tracing::warn!(window_start = ws, "no path through window graph");
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let mut statuses = vec![SentenceStatus::Skipped; sentences.len()];
        statuses_from_decode(&graph, &ids, &local, &result, ws, &mut statuses);
        // Audio the fillers absorbed is audio this window did not explain.
        let own: Vec<usize> = (0..result.arcs.len())
            .filter(|&k| graph.arc_sentence[result.arcs[k]].is_some())
            .collect();
        let (start, end) = match (own.first(), own.last()) {
            (Some(&f), Some(&l)) => {
                let lead = result.spans[..f].last().map_or(0, |sp| sp.1);
                let trail = result.spans.get(l + 1).map_or(we - ws, |sp| sp.0);
                (ws + lead, ws + trail)
            }
            _ => (ws, we),
        };
        Ok(Some(WindowOutput {
            start,
            end,
            statuses: ids
                .into_iter()
                .filter(|&i| statuses[i].is_aligned())
                .map(|i| (i, statuses[i]))
                .collect(),
        }))
    };
    let outputs: Vec<Option<WindowOutput>> = starts.par_iter().map(run).collect::<Result<_>>()?;

    // Best window per sentence by midpoint distance to the nearest explained edge.
    let mut chosen: Vec<Option<(f64, SentenceStatus)>> = vec![None; sentences.len()];
    for w in outputs.iter().flatten() {
        for &(i, st) in &w.statuses {
            let (a, b) = st.span().expect("aligned");
            let mid = (a + b) as f64 / 2.0;
            let margin = (mid - w.start as f64).min(w.end as f64 - mid);
            let better = match chosen[i] {
                None => true,
                Some((m, _)) => margin.partial_cmp(&m) == Some(Ordering::Greater),
            };
            if better {
                chosen[i] = Some((margin, st));
            }
        }
    }
    let mut out = vec![SentenceStatus::Skipped; sentences.len()];
    let mut last_end = 0;
    for (i, c) in chosen.into_iter().enumerate() {
        if let Some((_, st)) = c {
            let (a, _) = st.span().expect("aligned");
            if a >= last_end {
                last_end = st.span().unwrap().1;
                out[i] = st;
            }
        }
    }
    Ok(FlexAlignment { sentences: out })
}
