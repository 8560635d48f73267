//! Witten-Bell n-gram language models, document biasing, perplexity, ARPA
//! serialization and conversion to decoding graphs.
//!
//! Probabilities are interpolated Witten-Bell: for a context `h` with total
//! count `c(h)` and `t(h)` distinct continuations,
//! `p(w|h) = (c(h,w) + t(h) * p(w|h')) / (c(h) + t(h))`, where `h'` drops the
//! oldest token. Unseen continuations get `alpha(h) * p(w|h')` with
//! `alpha(h) = t(h) / (c(h) + t(h))`, so every distribution sums to one.
//! The unigram level interpolates with a uniform distribution and mixes in a
//! per-token floor.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsa::{Fsa, StateId};
use crate::vocab::{Vocab, UNK};

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_BIAS_LAMBDA: f64 = 0.7;
pub const DEFAULT_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub order: usize,
    /// Share of the training mass given to the target document.
    pub bias_lambda: f64,
    pub floor: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            order: DEFAULT_ORDER,
            bias_lambda: DEFAULT_BIAS_LAMBDA,
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct ContextDist {
    /// Natural-log probabilities of explicitly stored continuations.
    probs: BTreeMap<u32, f64>,
    /// Natural-log backoff weight.
    backoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramLM {
    order: usize,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    contexts: BTreeMap<Vec<u32>, ContextDist>,
    floor: f64,
}

type Counts = BTreeMap<Vec<u32>, BTreeMap<u32, f64>>;

impl NgramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.index
            .get(token)
            .or_else(|| self.index.get(UNK))
            .copied()
    }

    fn with_vocab(order: usize, vocab: Vec<String>, floor: f64) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            order,
            vocab,
            index,
            contexts: BTreeMap::new(),
            floor,
        }
    }

    /// Order-1 model with the given probabilities (must sum to one).
    pub fn from_unigram(probs: &[(String, f64)]) -> Result<Self> {
        let total: f64 = probs.iter().map(|(_, p)| p).sum();
        if probs.is_empty() || (total - 1.0).abs() > 1e-9 || probs.iter().any(|(_, p)| *p <= 0.0) {
            return Err(Error::Config("unigram probabilities must be positive and sum to 1".into()));
        }
        let mut lm = Self::with_vocab(1, probs.iter().map(|(t, _)| t.clone()).collect(), DEFAULT_FLOOR);
        if lm.index.len() != probs.len() {
            return Err(Error::Config("duplicate unigram token".into()));
        }
        let dist = ContextDist {
            probs: probs.iter().enumerate().map(|(i, (_, p))| (i as u32, p.ln())).collect(),
            backoff: 0.0,
        };
        lm.contexts.insert(Vec::new(), dist);
        Ok(lm)
    }

    pub fn uniform<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let p = 1.0 / tokens.len() as f64;
        Self::from_unigram(&tokens.iter().map(|t| (t.as_ref().to_string(), p)).collect::<Vec<_>>())
    }

    /// Natural-log probability of token id `w` after `history` (ids).
    pub fn log_prob_ids(&self, history: &[u32], w: u32) -> f64 {
        let keep = history.len().min(self.order - 1);
        let mut h = &history[history.len() - keep..];
        let mut acc = 0.0;
        loop {
            if let Some(ctx) = self.contexts.get(h) {
                if let Some(&p) = ctx.probs.get(&w) {
                    return acc + p;
                }
                acc += ctx.backoff;
            }
            if h.is_empty() {
                // Unreachable for trained models: the empty context covers the vocabulary.
                return acc + self.floor.ln();
            }
            h = &h[1..];
        }
    }

    /// Conditional log probability for string tokens; unknown strings map to
    /// `<unk>` when the model has it, otherwise they score the floor.
    pub fn log_prob(&self, history: &[&str], token: &str) -> f64 {
        let ids: Vec<u32> = history.iter().filter_map(|t| self.token_id(t)).collect();
        match self.token_id(token) {
            Some(w) => self.log_prob_ids(&ids, w),
            None => self.floor.ln(),
        }
    }

    /// Total natural-log probability of a token sequence (no sentence markers).
    pub fn score<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let mut hist: Vec<u32> = Vec::with_capacity(tokens.len());
        let mut total = 0.0;
        for t in tokens {
            match self.token_id(t.as_ref()) {
                Some(w) => {
                    total += self.log_prob_ids(&hist, w);
                    hist.push(w);
                }
                None => {
                    total += self.floor.ln();
                    hist.clear();
                }
            }
        }
        total
    }

    /// Every stored context as token strings, in model order.
    pub fn contexts(&self) -> Vec<Vec<&str>> {
        self.contexts
            .keys()
            .map(|h| h.iter().map(|&i| self.vocab[i as usize].as_str()).collect())
            .collect()
    }
}

pub fn perplexity<S: AsRef<str>>(lm: &NgramLM, tokens: &[S]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("perplexity needs at least one token"));
    }
    Ok((-lm.score(tokens) / tokens.len() as f64).exp())
}

fn collect_counts(
    corpora: &[(&[Vec<String>], f64)],
    order: usize,
    index: &HashMap<String, u32>,
) -> Counts {
    let mut counts: Counts = BTreeMap::new();
    for (seqs, weight) in corpora {
        if *weight <= 0.0 {
            continue;
        }
        for seq in seqs.iter() {
            let ids: Vec<u32> = seq.iter().map(|t| index[t.as_str()]).collect();
            for i in 0..ids.len() {
                for k in 1..=order.min(i + 1) {
                    let ctx = ids[i + 1 - k..i].to_vec();
                    *counts.entry(ctx).or_default().entry(ids[i]).or_default() += weight;
                }
            }
        }
    }
    counts
}

/// Trains on weighted corpora: each `(sequences, weight)` contributes its
/// n-gram counts scaled by `weight`.
pub fn train_weighted(corpora: &[(&[Vec<String>], f64)], order: usize, floor: f64) -> Result<NgramLM> {
    train_weighted_vocab::<&str>(corpora, &[], order, floor)
}

/// As [`train_weighted`], with `extra_vocab` added to the model vocabulary
/// (unseen tokens get unigram mass only).
pub fn train_weighted_vocab<S: AsRef<str>>(
    corpora: &[(&[Vec<String>], f64)],
    extra_vocab: &[S],
    order: usize,
    floor: f64,
) -> Result<NgramLM> {
    if order == 0 {
        return Err(Error::Config("order must be >= 1".into()));
    }
    let mut tokens: Vec<String> = corpora
        .iter()
        .flat_map(|(seqs, _)| seqs.iter().flatten().cloned())
        .collect();
    tokens.push(UNK.to_string());
    tokens.extend(extra_vocab.iter().map(|t| t.as_ref().to_string()));
    tokens.sort();
    tokens.dedup();
    let mut lm = NgramLM::with_vocab(order, tokens, floor);
    let counts = collect_counts(corpora, order, &lm.index);
    let total: f64 = counts.get(&Vec::new()).map_or(0.0, |m| m.values().sum());
    if total <= 0.0 {
        return Err(Error::EmptyCorpus);
    }

    let v = lm.vocab.len() as f64;
    let floor_mass = if floor * v < 1.0 { floor } else { 0.0 };
    let uni = &counts[&Vec::new()];
    let types = uni.len() as f64;
    let mut unigram = ContextDist::default();
    for w in 0..lm.vocab.len() as u32 {
        let c = uni.get(&w).copied().unwrap_or(0.0);
        let wb = (c + types / v) / (total + types);
        unigram.probs.insert(w, ((1.0 - v * floor_mass) * wb + floor_mass).ln());
    }
    lm.contexts.insert(Vec::new(), unigram);

    for len in 1..order {
        for (ctx, conts) in counts.iter().filter(|(k, _)| k.len() == len) {
            let c: f64 = conts.values().sum();
            let t = conts.len() as f64;
            let mut dist = ContextDist {
                probs: BTreeMap::new(),
                backoff: (t / (c + t)).ln(),
            };
            for (&w, &cw) in conts {
                let lower = lm.log_prob_ids(&ctx[1..], w).exp();
                dist.probs.insert(w, ((cw + t * lower) / (c + t)).ln());
            }
            lm.contexts.insert(ctx.clone(), dist);
        }
    }
    Ok(lm)
}

pub fn train_ngram(sequences: &[Vec<String>], order: usize) -> Result<NgramLM> {
    train_weighted(&[(sequences, 1.0)], order, DEFAULT_FLOOR)
}

/// Document-biased model: the document's counts are scaled so that it holds
/// `bias_lambda` of the total training mass against the background.
pub fn train_biased(doc: &[Vec<String>], background: &[Vec<String>], cfg: &LmConfig) -> Result<NgramLM> {
    train_biased_vocab::<&str>(doc, background, &[], cfg)
}

pub fn train_biased_vocab<S: AsRef<str>>(
    doc: &[Vec<String>],
    background: &[Vec<String>],
    extra_vocab: &[S],
    cfg: &LmConfig,
) -> Result<NgramLM> {
    let n_doc: usize = doc.iter().map(Vec::len).sum();
    let n_bg: usize = background.iter().map(Vec::len).sum();
    let lambda = cfg.bias_lambda;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("bias_lambda {lambda} outside [0, 1]")));
    }
    let (w_doc, w_bg) = if n_bg == 0 || lambda >= 1.0 {
        (1.0, 0.0)
    } else if n_doc == 0 || lambda <= 0.0 {
        (0.0, 1.0)
    } else {
        (lambda * n_bg as f64 / ((1.0 - lambda) * n_doc as f64), 1.0)
    };
    train_weighted_vocab(&[(doc, w_doc), (background, w_bg)], extra_vocab, cfg.order, cfg.floor)
}

/// How backoff is encoded in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackoffArcs {
    /// Every context state carries an arc for every token with its exact
    /// conditional probability; the acceptor is deterministic and each path
    /// scores exactly the model probability.
    #[default]
    Expanded,
    /// Compact form: explicit n-grams plus epsilon arcs weighted by the
    /// backoff weight. Max-plus search over this graph can prefer a backoff
    /// route that lands in a shorter context, so path scores upper-bound the
    /// model score instead of matching it.
    Epsilon,
}

/// One state per stored context; the empty context is the start state and all
/// states are final (sequences carry no end marker).
pub fn lm_to_fsa(lm: &NgramLM, vocab: &Vocab) -> Fsa {
    lm_to_fsa_with(lm, vocab, BackoffArcs::Expanded)
}

pub fn lm_to_fsa_with(lm: &NgramLM, vocab: &Vocab, mode: BackoffArcs) -> Fsa {
    let state_of: HashMap<&[u32], StateId> = lm
        .contexts
        .keys()
        .enumerate()
        .map(|(i, k)| (k.as_slice(), i as StateId))
        .collect();
    let dest = |ctx: &[u32], w: u32| -> StateId {
        let mut full: Vec<u32> = ctx.to_vec();
        full.push(w);
        let keep = full.len().min(lm.order - 1);
        let mut h = &full[full.len() - keep..];
        loop {
            if let Some(&s) = state_of.get(h) {
                return s;
            }
            h = &h[1..];
        }
    };
    let labels: Vec<u32> = lm.vocab.iter().map(|t| vocab.lookup(t)).collect();
    let mut fsa = Fsa::new(lm.contexts.len(), state_of[&[][..]]);
    for (ctx, dist) in &lm.contexts {
        let src = state_of[ctx.as_slice()];
        match mode {
            BackoffArcs::Expanded => {
                for w in 0..lm.vocab.len() as u32 {
                    fsa.add_arc(src, dest(ctx, w), Some(labels[w as usize]), lm.log_prob_ids(ctx, w));
                }
            }
            BackoffArcs::Epsilon => {
                for (&w, &p) in &dist.probs {
                    fsa.add_arc(src, dest(ctx, w), Some(labels[w as usize]), p);
                }
                if !ctx.is_empty() {
                    fsa.add_arc(src, state_of[&ctx[1..]], None, dist.backoff);
                }
            }
        }
        fsa.set_final(src, 0.0);
    }
    fsa
}

fn log10(x: f64) -> f64 {
    x / std::f64::consts::LN_10
}

/// ARPA text with n-grams of each order sorted lexicographically by tokens.
pub fn to_arpa(lm: &NgramLM) -> String {
    let mut sections: Vec<Vec<(Vec<&str>, f64, Option<f64>)>> = vec![Vec::new(); lm.order];
    for (ctx, dist) in &lm.contexts {
        for (&w, &p) in &dist.probs {
            let mut gram: Vec<u32> = ctx.clone();
            gram.push(w);
            let bow = if gram.len() < lm.order {
                lm.contexts.get(&gram).map(|d| d.backoff)
            } else {
                None
            };
            let words = gram.iter().map(|&i| lm.vocab[i as usize].as_str()).collect();
            sections[gram.len() - 1].push((words, p, bow));
        }
    }
    let mut out = String::from("\n\\data\\\n");
    for (k, sec) in sections.iter().enumerate() {
        let _ = writeln!(out, "ngram {}={}", k + 1, sec.len());
    }
    for (k, sec) in sections.iter_mut().enumerate() {
        sec.sort_by(|a, b| a.0.cmp(&b.0));
        let _ = write!(out, "\n\\{}-grams:\n", k + 1);
        for (words, p, bow) in sec.iter() {
            let _ = write!(out, "{:.7}\t{}", log10(*p), words.join(" "));
            if let Some(b) = bow {
                let _ = write!(out, "\t{:.7}", log10(*b));
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

pub fn write_arpa(lm: &NgramLM, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_arpa(lm)).map_err(|e| Error::io(path, e))
}

pub fn parse_arpa(text: &str) -> Result<NgramLM> {
    let bad = |m: &str| Error::Format(format!("arpa: {m}"));
    let mut grams: Vec<(Vec<String>, f64, Option<f64>)> = Vec::new();
    let mut order = 0;
    let mut section = 0usize;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line == "\\data\\" || line == "\\end\\" || line.starts_with("ngram ") {
            continue;
        }
        if let Some(k) = line.strip_prefix('\\').and_then(|s| s.strip_suffix("-grams:")) {
            section = k.parse().map_err(|_| bad("bad section header"))?;
            order = order.max(section);
            continue;
        }
        if section == 0 {
            return Err(bad("n-gram outside a section"));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(bad("malformed n-gram line"));
        }
        let p: f64 = fields[0].parse().map_err(|_| bad("bad probability"))?;
        let words: Vec<String> = fields[1].split(' ').map(str::to_string).collect();
        if words.len() != section {
            return Err(bad("n-gram length disagrees with section"));
        }
        let bow = match fields.get(2) {
            Some(b) => Some(b.parse::<f64>().map_err(|_| bad("bad backoff"))?),
            None => None,
        };
        let ln = std::f64::consts::LN_10;
        grams.push((words, p * ln, bow.map(|b| b * ln)));
    }
    if order == 0 {
        return Err(bad("no n-grams"));
    }
    let vocab: Vec<String> = grams
        .iter()
        .filter(|g| g.0.len() == 1)
        .map(|g| g.0[0].clone())
        .collect();
    let mut lm = NgramLM::with_vocab(order, vocab, DEFAULT_FLOOR);
    for (words, p, bow) in grams {
        let ids: Vec<u32> = words
            .iter()
            .map(|w| lm.index.get(w).copied().ok_or_else(|| bad("n-gram token missing from unigrams")))
            .collect::<Result<_>>()?;
        let (ctx, w) = ids.split_at(ids.len() - 1);
        lm.contexts.entry(ctx.to_vec()).or_default().probs.insert(w[0], p);
        if let Some(b) = bow {
            lm.contexts.entry(ids.clone()).or_default().backoff = b;
        }
    }
    Ok(lm)
}

pub fn read_arpa(path: impl AsRef<Path>) -> Result<NgramLM> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_arpa(&text)
}
