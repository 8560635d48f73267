//! Monotone sentence alignment of a transcript and its translation from
//! sentence embeddings, with a coarse-to-fine banded dynamic program.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{normalize, EmbeddingSet};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.627;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub src_start: usize,
    pub src_len: usize,
    pub tgt_start: usize,
    pub tgt_len: usize,
    pub cost: f64,
}

impl AlignmentPair {
    pub fn src_range(&self) -> std::ops::Range<usize> {
        self.src_start..self.src_start + self.src_len
    }

    pub fn tgt_range(&self) -> std::ops::Range<usize> {
        self.tgt_start..self.tgt_start + self.tgt_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BitextParams {
    pub max_merge: usize,
    /// Band half-width, in sentences, around the projected coarse path.
    pub window: usize,
    pub base_size: usize,
    pub penalty_ins: f64,
    pub penalty_del: f64,
    /// Added per extra sentence in a many-to-one or one-to-many pair.
    pub penalty_merge: f64,
    /// Build missing merged-span vectors from their single rows.
    pub fallback: bool,
    pub seed: u64,
}

impl Default for BitextParams {
    fn default() -> Self {
        Self {
            max_merge: 4,
            window: 10,
            base_size: 128,
            penalty_ins: 0.5,
            penalty_del: 0.5,
            penalty_merge: 0.2,
            fallback: true,
            seed: 0,
        }
    }
}

/// Moves `(src, tgt)` allowed by the DP: deletion, insertion, 1-1 and the
/// one-to-many / many-to-one merges up to `max_merge`.
pub fn moves(max_merge: usize) -> Vec<(usize, usize)> {
    let mut m = vec![(1, 1), (1, 0), (0, 1)];
    for k in 2..=max_merge {
        m.push((1, k));
        m.push((k, 1));
    }
    m
}

/// Span vectors: `spans[len - 1][start]`, missing when the span overruns.
struct SpanTable {
    dim: usize,
    spans: Vec<Vec<Vec<f64>>>,
}

impl SpanTable {
    fn from_set(set: &EmbeddingSet, max_merge: usize, fallback: bool) -> Result<Self> {
        let n = set.n_sentences();
        let mut spans = Vec::with_capacity(max_merge);
        for len in 1..=max_merge {
            let row: Result<Vec<Vec<f64>>> = (0..n.saturating_sub(len - 1))
                .map(|start| set.span_vector(start, len, fallback))
                .collect();
            spans.push(row?);
        }
        Ok(Self { dim: set.dim(), spans })
    }

    /// Singles only; merged spans are normalized sums of singles.
    fn from_singles(singles: Vec<Vec<f64>>, max_merge: usize) -> Self {
        let dim = singles.first().map_or(0, Vec::len);
        let n = singles.len();
        let mut spans = vec![singles];
        for len in 2..=max_merge {
            let row = (0..n.saturating_sub(len - 1))
                .map(|start| {
                    let mut v = vec![0.0; dim];
                    for s in &spans[0][start..start + len] {
                        for (a, b) in v.iter_mut().zip(s) {
                            *a += b;
                        }
                    }
                    normalize(&mut v);
                    v
                })
                .collect();
            spans.push(row);
        }
        Self { dim, spans }
    }

    fn n(&self) -> usize {
        self.spans[0].len()
    }

    fn get(&self, start: usize, len: usize) -> &[f64] {
        &self.spans[len - 1][start]
    }

    /// Halves the sentence count by averaging neighbours.
    fn downsample(&self, max_merge: usize) -> Self {
        let singles = &self.spans[0];
        let coarse = singles
            .chunks(2)
            .map(|c| {
                let mut v = vec![0.0; self.dim];
                for s in c {
                    for (a, b) in v.iter_mut().zip(s) {
                        *a += b;
                    }
                }
                normalize(&mut v);
                v
            })
            .collect();
        Self::from_singles(coarse, max_merge)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean of `1 - cos` over random cross pairs (all pairs when there are at
/// most 500 of them).
pub fn random_pair_baseline(src: &EmbeddingSet, tgt: &EmbeddingSet, seed: u64) -> Result<f64> {
    if src.dim() != tgt.dim() {
        return Err(Error::Dim {
            left: src.dim(),
            right: tgt.dim(),
        });
    }
    let (n, m) = (src.n_sentences(), tgt.n_sentences());
    if n == 0 || m == 0 {
        return Err(Error::EmptyInput("embedding set without sentences"));
    }
    let cos = |i: usize, j: usize| -> f64 {
        src.single(i)
            .iter()
            .zip(tgt.single(j))
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };
    let mean = if n * m <= 500 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..m {
                s += 1.0 - cos(i, j);
            }
        }
        s / (n * m) as f64
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..500)
            .map(|_| 1.0 - cos(rng.gen_range(0..n), rng.gen_range(0..m)))
            .sum::<f64>()
            / 500.0
    };
    Ok(mean.max(1e-6))
}

struct Scorer<'a> {
    src: &'a SpanTable,
    tgt: &'a SpanTable,
    baseline: f64,
    params: &'a BitextParams,
}

impl Scorer<'_> {
    /// Cost of the move `(a, b)` ending at DP node `(i, j)`.
    fn cost(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        match (a, b) {
            (1, 0) => self.params.penalty_del,
            (0, 1) => self.params.penalty_ins,
            _ => {
                let c = dot(self.src.get(i - a, a), self.tgt.get(j - b, b));
                ((1.0 - c) / self.baseline).max(0.0) + self.params.penalty_merge * (a + b - 2) as f64
            }
        }
    }
}

/// Column range `[lo, hi]` of DP nodes per row.
type Band = Vec<(usize, usize)>;

fn full_band(n: usize, m: usize) -> Band {
    vec![(0, m); n + 1]
}

/// DP restricted to `band`; returns the node path from (0,0) to (n,m) and the
/// total cost, or `None` when the band disconnects them.
fn banded_dp(scorer: &Scorer, band: &Band, mv: &[(usize, usize)]) -> Option<(Vec<(usize, usize)>, f64)> {
    let n = scorer.src.n();
    let m = scorer.tgt.n();
    let inside = |i: usize, j: usize| band[i].0 <= j && j <= band[i].1;
    let width = m + 1;
    let mut d = vec![f64::INFINITY; (n + 1) * width];
    let mut back = vec![u8::MAX; (n + 1) * width];
    d[0] = 0.0;
    for i in 0..=n {
        let (lo, hi) = band[i];
        for j in lo..=hi.min(m) {
            if i == 0 && j == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut arg = u8::MAX;
            for (k, &(a, b)) in mv.iter().enumerate() {
                if a > i || b > j || !inside(i - a, j - b) {
                    continue;
                }
                let prev = d[(i - a) * width + j - b];
                if prev == f64::INFINITY {
                    continue;
                }
                let c = prev + scorer.cost(i, j, a, b);
                if c < best {
                    best = c;
                    arg = k as u8;
                }
            }
            d[i * width + j] = best;
            back[i * width + j] = arg;
        }
    }
    let total = d[n * width + m];
    if total == f64::INFINITY {
        return None;
    }
    let mut path = vec![(n, m)];
    let (mut i, mut j) = (n, m);
    while (i, j) != (0, 0) {
        let (a, b) = mv[back[i * width + j] as usize];
        i -= a;
        j -= b;
        path.push((i, j));
    }
    path.reverse();
    Some((path, total))
}

/// Projects a coarse node path onto the finer level and widens it by `window`.
fn project_band(path: &[(usize, usize)], n: usize, m: usize, window: usize) -> Band {
    let mut band: Vec<Option<(usize, usize)>> = vec![None; n + 1];
    let mut mark = |i: usize, j: usize| {
        let i = i.min(n);
        let j = j.min(m);
        band[i] = Some(match band[i] {
            None => (j, j),
            Some((lo, hi)) => (lo.min(j), hi.max(j)),
        });
    };
    for w in path.windows(2) {
        let ((i0, j0), (i1, j1)) = (w[0], w[1]);
        for i in 2 * i0..=2 * i1 + 1 {
            for j in [2 * j0, 2 * j1 + 1] {
                mark(i, j);
            }
        }
    }
    let mut out = vec![(0, 0); n + 1];
    for i in 0..=n {
        let lo_i = i.saturating_sub(window);
        let hi_i = (i + window).min(n);
        let (mut lo, mut hi) = (usize::MAX, 0);
        for row in band.iter().take(hi_i + 1).skip(lo_i).flatten() {
            lo = lo.min(row.0);
            hi = hi.max(row.1);
        }
        out[i] = if lo == usize::MAX {
            (0, m)
        } else {
            (lo.saturating_sub(window), (hi + window).min(m))
        };
    }
    out
}

fn pairs_from_path(scorer: &Scorer, path: &[(usize, usize)]) -> Vec<AlignmentPair> {
    path.windows(2)
        .map(|w| {
            let ((i0, j0), (i1, j1)) = (w[0], w[1]);
            AlignmentPair {
                src_start: i0,
                src_len: i1 - i0,
                tgt_start: j0,
                tgt_len: j1 - j0,
                cost: scorer.cost(i1, j1, i1 - i0, j1 - j0),
            }
        })
        .collect()
}

fn coarse_to_fine(
    src: &SpanTable,
    tgt: &SpanTable,
    baseline: f64,
    params: &BitextParams,
) -> (Vec<(usize, usize)>, f64) {
    let mv = moves(params.max_merge);
    let scorer = Scorer {
        src,
        tgt,
        baseline,
        params,
    };
    let (n, m) = (src.n(), tgt.n());
    if n.max(m) <= params.base_size.max(1) || n < 2 || m < 2 {
        return banded_dp(&scorer, &full_band(n, m), &mv).expect("full band is connected");
    }
    let (coarse_path, _) = coarse_to_fine(
        &src.downsample(params.max_merge),
        &tgt.downsample(params.max_merge),
        baseline,
        params,
    );
    let mut window = params.window;
    loop {
        let band = project_band(&coarse_path, n, m, window);
        if let Some(r) = banded_dp(&scorer, &band, &mv) {
            return r;
        }
        window = (window * 2).max(1);
    }
}

/// Aligns two documents. Pair cost is `(1 - cos) / baseline` plus the merge
/// penalty; insertions and deletions cost their penalties.
pub fn align_sentences(src: &EmbeddingSet, tgt: &EmbeddingSet, params: &BitextParams) -> Result<Vec<AlignmentPair>> {
    if params.max_merge == 0 {
        return Err(Error::Config("max_merge must be >= 1".into()));
    }
    let baseline = random_pair_baseline(src, tgt, params.seed)?;
    let s = SpanTable::from_set(src, params.max_merge, params.fallback)?;
    let t = SpanTable::from_set(tgt, params.max_merge, params.fallback)?;
    let (path, _) = coarse_to_fine(&s, &t, baseline, params);
    let scorer = Scorer {
        src: &s,
        tgt: &t,
        baseline,
        params,
    };
    Ok(pairs_from_path(&scorer, &path))
}

/// Cost of every move, for callers that need the raw cost surface (oracles,
/// diagnostics): `cost(i, j, a, b)` for a move of `a` source and `b` target
/// sentences ending at prefix lengths `(i, j)`.
pub struct CostModel {
    src: SpanTable,
    tgt: SpanTable,
    baseline: f64,
    params: BitextParams,
}

impl CostModel {
    pub fn new(src: &EmbeddingSet, tgt: &EmbeddingSet, params: &BitextParams) -> Result<Self> {
        Ok(Self {
            baseline: random_pair_baseline(src, tgt, params.seed)?,
            src: SpanTable::from_set(src, params.max_merge, params.fallback)?,
            tgt: SpanTable::from_set(tgt, params.max_merge, params.fallback)?,
            params: *params,
        })
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn cost(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        Scorer {
            src: &self.src,
            tgt: &self.tgt,
            baseline: self.baseline,
            params: &self.params,
        }
        .cost(i, j, a, b)
    }
}

pub fn total_cost(pairs: &[AlignmentPair]) -> f64 {
    pairs.iter().map(|p| p.cost).sum()
}

/// Partitions pairs into `cost <= threshold` and the rest.
pub fn filter_alignments(pairs: &[AlignmentPair], threshold: f64) -> (Vec<AlignmentPair>, Vec<AlignmentPair>) {
    pairs.iter().partition(|p| p.cost <= threshold)
}

/// Monotone, gap-free coverage of both documents with no empty pair.
pub fn check_segmentation(pairs: &[AlignmentPair], n_src: usize, n_tgt: usize) -> Result<()> {
    let (mut i, mut j) = (0, 0);
    for (k, p) in pairs.iter().enumerate() {
        if p.src_start != i || p.tgt_start != j || (p.src_len == 0 && p.tgt_len == 0) {
            return Err(Error::Order { index: k });
        }
        i += p.src_len;
        j += p.tgt_len;
    }
    if (i, j) != (n_src, n_tgt) {
        return Err(Error::Format(format!(
            "alignment covers ({i}, {j}) of ({n_src}, {n_tgt}) sentences"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis_set(ids: &[usize], dim: usize, max_merge: usize) -> EmbeddingSet {
        let names: Vec<String> = (0..ids.len()).map(|i| format!("s{i}")).collect();
        let vecs: Vec<Vec<f64>> = ids
            .iter()
            .map(|&k| (0..dim).map(|d| if d == k { 1.0 } else { 0.0 }).collect())
            .collect();
        EmbeddingSet::from_vectors(&names, &vecs, max_merge).unwrap()
    }

    #[test]
    fn identical_documents_align_diagonally() {
        let a = basis_set(&[0, 1, 2, 3, 4], 8, 4);
        let pairs = align_sentences(&a, &a, &BitextParams::default()).unwrap();
        assert_eq!(pairs.len(), 5);
        for (k, p) in pairs.iter().enumerate() {
            assert_eq!((p.src_start, p.src_len, p.tgt_start, p.tgt_len), (k, 1, k, 1));
            assert!(p.cost.abs() < 1e-9);
        }
    }

    #[test]
    fn deleted_target_sentence() {
        let src = basis_set(&[0, 1, 2, 3, 4], 8, 4);
        let tgt = basis_set(&[0, 1, 3, 4], 8, 4);
        let pairs = align_sentences(&src, &tgt, &BitextParams::default()).unwrap();
        let shape: Vec<(usize, usize)> = pairs.iter().map(|p| (p.src_len, p.tgt_len)).collect();
        assert_eq!(shape, vec![(1, 1), (1, 1), (1, 0), (1, 1), (1, 1)]);
        assert_eq!(pairs[2].src_start, 2);
        check_segmentation(&pairs, 5, 4).unwrap();
    }

    #[test]
    fn dimension_mismatch() {
        let a = basis_set(&[0], 4, 1);
        let b = basis_set(&[0], 5, 1);
        assert!(matches!(align_sentences(&a, &b, &BitextParams::default()), Err(Error::Dim { .. })));
    }

    #[test]
    fn missing_merged_row_without_fallback() {
        let a = basis_set(&[0, 1, 2], 4, 1);
        let params = BitextParams {
            max_merge: 2,
            fallback: false,
            ..BitextParams::default()
        };
        assert!(matches!(align_sentences(&a, &a, &params), Err(Error::MissingEmbedding { .. })));
        let params = BitextParams {
            fallback: true,
            ..params
        };
        assert!(align_sentences(&a, &a, &params).is_ok());
    }

    #[test]
    fn threshold_boundary_is_kept() {
        let mk = |c| AlignmentPair {
            src_start: 0,
            src_len: 1,
            tgt_start: 0,
            tgt_len: 1,
            cost: c,
        };
        let pairs = vec![mk(0.1), mk(0.627), mk(0.7)];
        let (kept, dropped) = filter_alignments(&pairs, DEFAULT_THRESHOLD);
        assert_eq!(kept.iter().map(|p| p.cost).collect::<Vec<_>>(), vec![0.1, 0.627]);
        assert_eq!(dropped.iter().map(|p| p.cost).collect::<Vec<_>>(), vec![0.7]);
        assert_eq!(filter_alignments(&pairs, f64::INFINITY).0.len(), 3);
        assert_eq!(DEFAULT_THRESHOLD, 0.627);
    }
}
