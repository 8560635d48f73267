//! Alignment-quality statistics, post-filtering and CER-bin sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{align_text, EditCosts, EditKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityStats {
    pub cer: f64,
    pub max_consecutive_errors: usize,
    /// Errors divided by hypothesis length.
    pub error_ratio: f64,
    pub ref_len: usize,
    pub hyp_len: usize,
}

pub fn compute_stats<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<QualityStats> {
    if reference.is_empty() {
        return Err(Error::EmptyRef);
    }
    let ops = align_text(hyp, reference, EditCosts::default());
    let mut errors = 0usize;
    let mut run = 0usize;
    let mut max_run = 0usize;
    for op in &ops {
        if op.kind == EditKind::Match {
            run = 0;
        } else {
            errors += 1;
            run += 1;
            max_run = max_run.max(run);
        }
    }
    let error_ratio = if hyp.is_empty() {
        if errors == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        errors as f64 / hyp.len() as f64
    };
    Ok(QualityStats {
        cer: errors as f64 / reference.len() as f64,
        max_consecutive_errors: max_run,
        error_ratio,
        ref_len: reference.len(),
        hyp_len: hyp.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterThresholds {
    pub max_cer: f64,
    pub max_consecutive_errors: usize,
    pub max_error_ratio: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            max_cer: 0.3,
            max_consecutive_errors: 6,
            max_error_ratio: 0.3,
        }
    }
}

impl FilterThresholds {
    pub fn unbounded() -> Self {
        Self {
            max_cer: f64::INFINITY,
            max_consecutive_errors: usize::MAX,
            max_error_ratio: f64::INFINITY,
        }
    }

    pub fn accepts(&self, s: &QualityStats) -> bool {
        s.cer <= self.max_cer
            && s.max_consecutive_errors <= self.max_consecutive_errors
            && s.error_ratio <= self.max_error_ratio
    }
}

/// Splits `segments` into `(accepted, rejected)`, preserving order.
pub fn post_filter<S>(segments: Vec<(S, QualityStats)>, thresholds: &FilterThresholds) -> (Vec<(S, QualityStats)>, Vec<(S, QualityStats)>) {
    segments.into_iter().partition(|(_, q)| thresholds.accepts(q))
}

/// Index of the CER bin: bin `k` holds `edges[k-1] <= cer < edges[k]`.
pub fn cer_bin(cer: f64, edges: &[f64]) -> usize {
    edges.partition_point(|&e| e <= cer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSheetRow {
    pub utt_id: String,
    pub cer_bin: usize,
    pub text: String,
    pub label: Option<bool>,
}

/// Buckets items by CER and draws up to `per_bin` from each non-empty bin
/// without replacement. Output is ordered by bin, then by original position.
pub fn bin_sample<T: Clone>(items: &[(T, f64)], bin_edges: &[f64], per_bin: usize, seed: u64) -> Result<Vec<(usize, T)>> {
    if bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("bin edges must be strictly increasing".into()));
    }
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); bin_edges.len() + 1];
    for (i, (_, cer)) in items.iter().enumerate() {
        bins[cer_bin(*cer, bin_edges)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (b, members) in bins.iter().enumerate() {
        let mut chosen: Vec<usize> = if members.len() <= per_bin {
            members.clone()
        } else {
            members.choose_multiple(&mut rng, per_bin).copied().collect()
        };
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|i| (b, items[i].0.clone())));
    }
    Ok(out)
}

/// Precision of the accepted subset among human-labelled rows, for each CER
/// threshold. Rows without a label are ignored.
pub fn threshold_precision(labelled: &[(f64, bool)], cer_thresholds: &[f64]) -> Vec<(f64, usize, f64)> {
    cer_thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<bool> = labelled
                .iter()
                .filter(|(c, _)| *c <= t)
                .map(|(_, ok)| *ok)
                .collect();
            let good = kept.iter().filter(|&&ok| ok).count();
            let precision = if kept.is_empty() {
                f64::NAN
            } else {
                good as f64 / kept.len() as f64
            };
            (t, kept.len(), precision)
        })
        .collect()
}
