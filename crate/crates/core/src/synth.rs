//! Synthetic meetings with known gold alignments: spoken token streams,
//! non-verbatim transcripts with edit provenance, frame posteriors,
//! pseudo-translations, sentence embeddings and utterance manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{FlexAlignment, SentenceStatus};
use crate::embedding::{write_embeddings, EmbeddingSet};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::manifest::{Gender, UtteranceManifestRow};
use crate::posterior::{write_posteriors, PosteriorMatrix};
use crate::textproc::sentence_id;
use crate::vocab::{TokenId, Vocab, BLANK, BLANK_ID, UNK};

/// Seed for token embedding vectors, shared by every document so a token and
/// its translation map to the same vector everywhere.
const EMBEDDING_SEED: u64 = 0x5eed_e3b0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub p_sub: f64,
    pub p_reorder: f64,
    pub p_unspoken: f64,
    pub p_acoustic: f64,
    /// Inclusive frames-per-token range.
    pub dur_range: (usize, usize),
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            p_sub: 0.0,
            p_reorder: 0.0,
            p_unspoken: 0.0,
            p_acoustic: 0.0,
            dur_range: (2, 5),
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_sub", self.p_sub),
            ("p_reorder", self.p_reorder),
            ("p_unspoken", self.p_unspoken),
            ("p_acoustic", self.p_acoustic),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.dur_range.0 < 1 || self.dur_range.1 < self.dur_range.0 {
            return Err(Error::Config(format!("bad dur_range {:?}", self.dur_range)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeetingSize {
    pub n_speakers: usize,
    pub n_sentences: usize,
    pub vocab_size: usize,
}

impl Default for MeetingSize {
    fn default() -> Self {
        Self {
            n_speakers: 2,
            n_sentences: 200,
            vocab_size: 200,
        }
    }
}

/// A transcript edit relative to the spoken sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Edit {
    /// Positions `pos` and `other` were swapped (applied before substitutions).
    Reorder { pos: usize, other: usize },
    /// The token at transcript position `pos` was written instead of the spoken one.
    Sub { pos: usize, spoken: String, written: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSentence {
    pub spoken: Vec<String>,
    pub transcript: Vec<String>,
    pub speaker_id: String,
    pub turn: usize,
    pub unspoken: bool,
    pub edits: Vec<Edit>,
}

/// Undoes `edits` on transcript tokens, recovering the spoken form.
pub fn reconstruct_spoken(transcript: &[String], edits: &[Edit]) -> Vec<String> {
    let mut toks = transcript.to_vec();
    for e in edits.iter().rev() {
        if let Edit::Sub { pos, spoken, .. } = e {
            toks[*pos] = spoken.clone();
        }
    }
    for e in edits.iter().rev() {
        if let Edit::Reorder { pos, other } = e {
            toks.swap(*pos, *other);
        }
    }
    toks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldSentence {
    pub sent_id: String,
    pub speaker_id: String,
    pub spoken: bool,
    /// Half-open frame span from the first token's first frame to the last
    /// token's last frame; `(0, 0)` when unspoken.
    pub start_frame: usize,
    pub end_frame: usize,
    #[serde(default)]
    pub edits: Vec<Edit>,
}

#[derive(Debug, Clone)]
pub struct Meeting {
    pub doc_id: String,
    pub speakers: Vec<(String, Gender)>,
    pub sentences: Vec<SynthSentence>,
    pub translations: Vec<String>,
    pub posteriors: PosteriorMatrix,
    pub gold: Vec<GoldSentence>,
    pub src_vectors: Vec<Vec<f64>>,
    pub tgt_vectors: Vec<Vec<f64>>,
}

/// Source-side token strings for a vocabulary of `n` tokens.
pub fn synth_tokens(n: usize) -> Vec<String> {
    (0..n)
        .map(|k| char::from_u32(0x4E00 + k as u32).expect("CJK range").to_string())
        .collect()
}

/// Model vocabulary for synthetic data: blank, unk, then the tokens.
pub fn synth_vocab(n: usize) -> Vocab {
    let mut toks = vec![BLANK.to_string(), UNK.to_string()];
    toks.extend(synth_tokens(n));
    Vocab::from_tokens(toks).expect("distinct synthetic tokens")
}

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "mi", "ru", "te", "lo", "sa", "ne", "vi", "du", "fa", "go", "hi", "ju", "pe", "zo",
];

/// Target word for source token index `k`; injective for `k < 4096`.
pub fn target_word(k: usize) -> String {
    let mut w = String::new();
    w.push_str(SYLLABLES[k % 16]);
    w.push_str(SYLLABLES[(k / 16) % 16]);
    if k >= 256 {
        w.push_str(SYLLABLES[(k / 256) % 16]);
    }
    w
}

fn token_vector(k: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(EMBEDDING_SEED ^ (k as u64).wrapping_mul(0x9E37_79B9));
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn bag_vector<R: Rng>(ids: &[usize], dim: usize, noise: f64, rng: &mut R) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &k in ids {
        for (a, b) in v.iter_mut().zip(token_vector(k, dim)) {
            *a += b;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for a in &mut v {
        *a = *a / norm + noise * rng.gen_range(-1.0..1.0);
    }
    v
}

/// Options beyond the noise model and meeting size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub hop_ms: u32,
    pub emb_dim: usize,
    /// Per-coordinate uniform noise added to unit sentence vectors.
    pub emb_noise: f64,
    /// Probability of swapping two adjacent words in a translation.
    pub tgt_reorder: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            hop_ms: 40,
            emb_dim: 64,
            emb_noise: 0.05,
            tgt_reorder: 0.1,
        }
    }
}

/// One meeting with speakers `spk0..` of alternating gender.
pub fn gen_meeting(params: &NoiseParams, size: &MeetingSize, seed: u64) -> Result<Meeting> {
    let speakers: Vec<(String, Gender)> = (0..size.n_speakers.max(1))
        .map(|i| (format!("spk{i}"), if i % 2 == 0 { Gender::M } else { Gender::F }))
        .collect();
    gen_meeting_with("doc0", &speakers, params, size, &RenderOptions::default(), seed)
}

pub fn gen_meeting_with(
    doc_id: &str,
    speakers: &[(String, Gender)],
    params: &NoiseParams,
    size: &MeetingSize,
    opts: &RenderOptions,
    seed: u64,
) -> Result<Meeting> {
    params.validate()?;
    if speakers.is_empty() || size.n_sentences == 0 || size.vocab_size == 0 {
        return Err(Error::Config("meeting sizes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = synth_tokens(size.vocab_size);
    let v = size.vocab_size;

    // Bigram generator: each token prefers a few successors.
    let succ: Vec<Vec<usize>> = (0..v)
        .map(|_| (0..6).map(|_| rng.gen_range(0..v)).collect())
        .collect();
    let mut spoken_ids: Vec<Vec<usize>> = Vec::with_capacity(size.n_sentences);
    for _ in 0..size.n_sentences {
        let len = rng.gen_range(6..=16);
        let mut s = vec![rng.gen_range(0..v)];
        while s.len() < len {
            let prev = *s.last().unwrap();
            let next = if rng.gen_bool(0.8) {
                succ[prev][rng.gen_range(0..succ[prev].len())]
            } else {
                rng.gen_range(0..v)
            };
            s.push(next);
        }
        spoken_ids.push(s);
    }

    let mut unspoken: Vec<bool> = (0..size.n_sentences).map(|_| rng.gen_bool(params.p_unspoken)).collect();
    if unspoken.iter().all(|&u| u) {
        unspoken[0] = false;
    }

    // Turns of 1-4 sentences; consecutive turns change speaker.
    let mut turn_of = Vec::with_capacity(size.n_sentences);
    let mut speaker_of = Vec::with_capacity(size.n_sentences);
    let (mut turn, mut spk, mut left) = (0usize, rng.gen_range(0..speakers.len()), rng.gen_range(1..=4));
    for _ in 0..size.n_sentences {
        if left == 0 {
            turn += 1;
            left = rng.gen_range(1..=4);
            if speakers.len() > 1 {
                let next = rng.gen_range(0..speakers.len() - 1);
                spk = if next >= spk { next + 1 } else { next };
            }
        }
        turn_of.push(turn);
        speaker_of.push(spk);
        left -= 1;
    }

    let mut sentences = Vec::with_capacity(size.n_sentences);
    for (i, ids) in spoken_ids.iter().enumerate() {
        let spoken: Vec<String> = ids.iter().map(|&k| tokens[k].clone()).collect();
        let mut written = spoken.clone();
        let mut edits = Vec::new();
        let mut p = 0;
        while p + 1 < written.len() {
            if rng.gen_bool(params.p_reorder) {
                let reach = if p + 2 < written.len() { 2 } else { 1 };
                let other = p + rng.gen_range(1..=reach);
                written.swap(p, other);
                edits.push(Edit::Reorder { pos: p, other });
                p = other + 1;
            } else {
                p += 1;
            }
        }
        for pos in 0..written.len() {
            if rng.gen_bool(params.p_sub) {
                let mut k = rng.gen_range(0..v);
                if tokens[k] == written[pos] {
                    k = (k + 1) % v;
                }
                if tokens[k] != written[pos] {
                    edits.push(Edit::Sub {
                        pos,
                        spoken: written[pos].clone(),
                        written: tokens[k].clone(),
                    });
                    written[pos] = tokens[k].clone();
                }
            }
        }
        sentences.push(SynthSentence {
            spoken,
            transcript: written,
            speaker_id: speakers[speaker_of[i]].0.clone(),
            turn: turn_of[i],
            unspoken: unspoken[i],
            edits,
        });
    }

    // Timeline.
    let (dmin, dmax) = params.dur_range;
    let mut frames: Vec<TokenId> = vec![BLANK_ID; rng.gen_range(5..=15)];
    let mut gold = Vec::with_capacity(size.n_sentences);
    let mut last_turn: Option<usize> = None;
    for (i, s) in sentences.iter().enumerate() {
        let sent_id = sentence_id(doc_id, i);
        if s.unspoken {
            gold.push(GoldSentence {
                sent_id,
                speaker_id: s.speaker_id.clone(),
                spoken: false,
                start_frame: 0,
                end_frame: 0,
                edits: s.edits.clone(),
            });
            continue;
        }
        if let Some(t) = last_turn {
            let gap = if t == s.turn {
                rng.gen_range(3..=8)
            } else {
                rng.gen_range(35..=60)
            };
            frames.extend(std::iter::repeat(BLANK_ID).take(gap));
        }
        last_turn = Some(s.turn);
        let start = frames.len();
        for (j, &k) in spoken_ids[i].iter().enumerate() {
            if j > 0 {
                let gap = rng.gen_range(1..=2);
                frames.extend(std::iter::repeat(BLANK_ID).take(gap));
            }
            let d = rng.gen_range(dmin..=dmax);
            frames.extend(std::iter::repeat(k as TokenId + 2).take(d));
        }
        gold.push(GoldSentence {
            sent_id,
            speaker_id: s.speaker_id.clone(),
            spoken: true,
            start_frame: start,
            end_frame: frames.len(),
            edits: s.edits.clone(),
        });
    }
    let tail = rng.gen_range(5..=15);
    frames.extend(std::iter::repeat(BLANK_ID).take(tail));

    let vsize = v + 2;
    let pa = params.p_acoustic;
    let other = if pa > 0.0 {
        (pa / (vsize - 1) as f64).ln() as f32
    } else {
        f32::NEG_INFINITY
    };
    let gold_lp = (1.0 - pa).ln() as f32;
    let mut logp = vec![other; frames.len() * vsize];
    for (t, &g) in frames.iter().enumerate() {
        logp[t * vsize + g as usize] = gold_lp;
    }
    let posteriors = PosteriorMatrix::new(opts.hop_ms, vsize, logp)?;

    // Translations of the transcript form, and embeddings.
    let index_of: BTreeMap<&str, usize> = tokens.iter().enumerate().map(|(k, t)| (t.as_str(), k)).collect();
    let mut translations = Vec::with_capacity(sentences.len());
    let mut src_vectors = Vec::with_capacity(sentences.len());
    let mut tgt_vectors = Vec::with_capacity(sentences.len());
    for s in &sentences {
        let ids: Vec<usize> = s.transcript.iter().map(|t| index_of[t.as_str()]).collect();
        let mut words: Vec<String> = ids.iter().map(|&k| target_word(k)).collect();
        let mut p = 0;
        while p + 1 < words.len() {
            if rng.gen_bool(opts.tgt_reorder) {
                words.swap(p, p + 1);
                p += 2;
            } else {
                p += 1;
            }
        }
        let mut line = words.join(" ");
        line.push('.');
        translations.push(line);
        src_vectors.push(bag_vector(&ids, opts.emb_dim, opts.emb_noise, &mut rng));
        tgt_vectors.push(bag_vector(&ids, opts.emb_dim, opts.emb_noise, &mut rng));
    }

    Ok(Meeting {
        doc_id: doc_id.to_string(),
        speakers: speakers.to_vec(),
        sentences,
        translations,
        posteriors,
        gold,
        src_vectors,
        tgt_vectors,
    })
}

impl Meeting {
    /// Transcript as speaker-marked turns, one turn per line.
    pub fn transcript_text(&self) -> String {
        let mut out = String::new();
        let mut cur: Option<usize> = None;
        for s in &self.sentences {
            if cur != Some(s.turn) {
                if cur.is_some() {
                    out.push('\n');
                }
                let _ = write!(out, "{}：", s.speaker_id);
                cur = Some(s.turn);
            }
            out.push_str(&s.transcript.concat());
            out.push('。');
        }
        out.push('\n');
        out
    }

    pub fn sent_ids(&self) -> Vec<String> {
        (0..self.sentences.len()).map(|i| sentence_id(&self.doc_id, i)).collect()
    }

    pub fn gold_alignment(&self) -> FlexAlignment {
        gold_alignment(&self.gold)
    }

    /// One manifest row per spoken sentence.
    pub fn manifest_rows(&self) -> Vec<UtteranceManifestRow> {
        let hop = self.posteriors.hop_ms() as f64 / 1000.0;
        let gender: BTreeMap<&str, Gender> = self.speakers.iter().map(|(s, g)| (s.as_str(), *g)).collect();
        self.gold
            .iter()
            .zip(&self.sentences)
            .zip(&self.translations)
            .filter(|((g, _), _)| g.spoken)
            .map(|((g, s), t)| UtteranceManifestRow {
                utt_id: g.sent_id.clone(),
                doc_id: self.doc_id.clone(),
                speaker_id: g.speaker_id.clone(),
                gender: gender.get(g.speaker_id.as_str()).copied().unwrap_or(Gender::U),
                duration_s: (g.end_frame - g.start_frame) as f64 * hop,
                start_s: g.start_frame as f64 * hop,
                end_s: g.end_frame as f64 * hop,
                text_src: s.transcript.concat(),
                text_tgt: t.clone(),
                quality: None,
                provenance: None,
            })
            .collect()
    }
}

pub fn gold_alignment(gold: &[GoldSentence]) -> FlexAlignment {
    FlexAlignment {
        sentences: gold
            .iter()
            .map(|g| {
                if g.spoken {
                    SentenceStatus::Aligned {
                        start_frame: g.start_frame,
                        end_frame: g.end_frame,
                        conf: 1.0,
                    }
                } else {
                    SentenceStatus::Skipped
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub boundary_accuracy: f64,
    pub skip_precision: f64,
    pub skip_recall: f64,
    pub k_frames: usize,
}

/// Boundary accuracy over gold-spoken sentences (both endpoints within
/// `k_frames`; a predicted skip counts as a miss) and skip precision/recall
/// against the unspoken flags. Empty denominators give 1.0.
pub fn score_alignment(pred: &FlexAlignment, gold: &[GoldSentence], k_frames: usize) -> Result<AlignmentScore> {
    if pred.sentences.len() != gold.len() {
        return Err(Error::UniverseMismatch(format!(
            "{} predicted vs {} gold sentences",
            pred.sentences.len(),
            gold.len()
        )));
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let (mut spoken, mut hits, mut pred_skip, mut gold_skip, mut both) = (0, 0, 0, 0, 0);
    for (p, g) in pred.sentences.iter().zip(gold) {
        let skipped = !p.is_aligned();
        if g.spoken {
            spoken += 1;
            if let Some((a, b)) = p.span() {
                if a.abs_diff(g.start_frame) <= k_frames && b.abs_diff(g.end_frame) <= k_frames {
                    hits += 1;
                }
            }
        } else {
            gold_skip += 1;
        }
        if skipped {
            pred_skip += 1;
            if !g.spoken {
                both += 1;
            }
        }
    }
    Ok(AlignmentScore {
        boundary_accuracy: ratio(hits, spoken),
        skip_precision: ratio(both, pred_skip),
        skip_recall: ratio(both, gold_skip),
        k_frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub noise: NoiseParams,
    pub size: MeetingSize,
    pub render: RenderOptions,
    /// Documents sharing one speaker group; groups never share speakers.
    pub docs_per_group: usize,
    pub max_merge: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_docs: 20,
            noise: NoiseParams::default(),
            size: MeetingSize::default(),
            render: RenderOptions::default(),
            docs_per_group: 2,
            max_merge: 4,
        }
    }
}

pub fn doc_id(index: usize) -> String {
    format!("doc{index:03}")
}

fn doc_speakers(group: usize, n: usize) -> Vec<(String, Gender)> {
    (0..n.max(1))
        .map(|i| {
            (
                format!("g{group:02}s{i}"),
                if i % 2 == 0 { Gender::M } else { Gender::F },
            )
        })
        .collect()
}

/// Meetings for a whole corpus, generated in parallel from per-document seeds.
pub fn gen_corpus(cfg: &SynthConfig, seed: u64) -> Result<Vec<Meeting>> {
    if cfg.n_docs == 0 || cfg.docs_per_group == 0 {
        return Err(Error::Config("n_docs and docs_per_group must be >= 1".into()));
    }
    (0..cfg.n_docs)
        .into_par_iter()
        .map(|d| {
            let speakers = doc_speakers(d / cfg.docs_per_group, cfg.size.n_speakers);
            let doc_seed = seed.wrapping_mul(1_000_003).wrapping_add(d as u64);
            gen_meeting_with(&doc_id(d), &speakers, &cfg.noise, &cfg.size, &cfg.render, doc_seed)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerRow {
    pub speaker_id: String,
    pub gender: Gender,
}

/// Paths of one document inside a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct DocPaths {
    pub dir: PathBuf,
    pub transcript: PathBuf,
    pub translation: PathBuf,
    pub src_emb: PathBuf,
    pub tgt_emb: PathBuf,
    pub posteriors: PathBuf,
    pub vad: PathBuf,
}

pub fn doc_paths(bundle: &Path, doc: &str) -> DocPaths {
    let dir = bundle.join("docs").join(doc);
    DocPaths {
        transcript: dir.join("transcript.txt"),
        translation: dir.join("translation.txt"),
        src_emb: dir.join("src.lemb"),
        tgt_emb: dir.join("tgt.lemb"),
        posteriors: dir.join("audio.lpost"),
        vad: dir.join("vad.jsonl"),
        dir,
    }
}

pub fn gold_path(bundle: &Path, doc: &str) -> PathBuf {
    bundle.join("gold").join(format!("{doc}.jsonl"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a bundle: `vocab.txt`, `speakers.jsonl`, `synth.json`,
/// `docs/<doc>/{transcript.txt, translation.txt, src.lemb, tgt.lemb, audio.lpost}`
/// and `gold/<doc>.jsonl`.
pub fn write_bundle(dir: &Path, cfg: &SynthConfig, meetings: &[Meeting]) -> Result<()> {
    create_dir(&dir.join("gold"))?;
    synth_vocab(cfg.size.vocab_size).write(dir.join("vocab.txt"))?;
    jsonl::write_json(dir.join("synth.json"), cfg)?;
    let mut speakers: BTreeMap<String, Gender> = BTreeMap::new();
    for m in meetings {
        speakers.extend(m.speakers.iter().cloned());
    }
    let rows: Vec<SpeakerRow> = speakers
        .into_iter()
        .map(|(speaker_id, gender)| SpeakerRow { speaker_id, gender })
        .collect();
    jsonl::write_jsonl(dir.join("speakers.jsonl"), &rows)?;
    meetings.par_iter().try_for_each(|m| -> Result<()> {
        let p = doc_paths(dir, &m.doc_id);
        create_dir(&p.dir)?;
        write_text(&p.transcript, &m.transcript_text())?;
        let mut tr = m.translations.join("\n");
        tr.push('\n');
        write_text(&p.translation, &tr)?;
        let ids = m.sent_ids();
        write_embeddings(&EmbeddingSet::from_vectors(&ids, &m.src_vectors, cfg.max_merge)?, &p.src_emb)?;
        write_embeddings(&EmbeddingSet::from_vectors(&ids, &m.tgt_vectors, cfg.max_merge)?, &p.tgt_emb)?;
        write_posteriors(&m.posteriors, &p.posteriors)?;
        jsonl::write_jsonl(gold_path(dir, &m.doc_id), &m.gold)?;
        Ok(())
    })
}

pub fn read_gold(path: impl AsRef<Path>) -> Result<Vec<GoldSentence>> {
    jsonl::read_jsonl(path)
}

/// Utterance manifest for split experiments: `n_docs` documents over
/// `n_speakers` speakers in mixed-gender pairs; each document is a dialogue
/// of one pair with 30-60 utterances of 2-10 s.
pub fn gen_split_manifest(n_docs: usize, n_speakers: usize, seed: u64) -> Vec<UtteranceManifestRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pairs = (n_speakers / 2).max(1);
    let mut pair_of: Vec<usize> = (0..n_docs).map(|d| d % n_pairs).collect();
    pair_of.shuffle(&mut rng);
    let mut rows = Vec::new();
    for (d, &pair) in pair_of.iter().enumerate() {
        let doc = doc_id(d);
        let spk = [(format!("spk{:02}", 2 * pair), Gender::M), (format!("spk{:02}", 2 * pair + 1), Gender::F)];
        let mut t = 0.0;
        let mut who = rng.gen_range(0..2);
        for u in 0..rng.gen_range(30..=60) {
            let dur = rng.gen_range(2.0..10.0);
            rows.push(UtteranceManifestRow {
                utt_id: format!("{doc}_u{u:03}"),
                doc_id: doc.clone(),
                speaker_id: spk[who].0.clone(),
                gender: spk[who].1,
                duration_s: dur,
                start_s: t,
                end_s: t + dur,
                text_src: String::new(),
                text_tgt: String::new(),
                quality: None,
                provenance: None,
            });
            t += dur + rng.gen_range(0.2..1.0);
            if rng.gen_bool(0.8) {
                who = 1 - who;
            }
        }
    }
    rows
}
