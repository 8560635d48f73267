//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use longalign_core::fsa::Fsa;
use longalign_core::posterior::PosteriorMatrix;
use rand::Rng;

/// Log-softmax rows rounded to multiples of 2^-16 so every sum the decoder
/// and the oracle form is exact in f64. Some entries are zero-probability.
pub fn quantized_posteriors<R: Rng>(rng: &mut R, frames: usize, vocab: usize) -> PosteriorMatrix {
    let q = 65536.0;
    let mut logp = Vec::with_capacity(frames * vocab);
    for _ in 0..frames {
        let logits: Vec<f64> = (0..vocab)
            .map(|k| {
                if k > 0 && rng.gen_bool(0.15) {
                    f64::NEG_INFINITY
                } else {
                    rng.gen_range(-4.0..4.0)
                }
            })
            .collect();
        let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
        logp.extend(logits.iter().map(|x| ((x - lse) * q).round() / q).map(|x| x as f32));
    }
    PosteriorMatrix::new(10, vocab, logp).unwrap()
}

/// Random graph with at most `max_states` states, labels in `1..vocab`,
/// epsilon arcs (cycles allowed) and non-positive dyadic weights.
pub fn random_graph<R: Rng>(rng: &mut R, vocab: usize, max_states: usize) -> Fsa {
    let n = rng.gen_range(1..=max_states);
    let mut fsa = Fsa::new(n, rng.gen_range(0..n) as u32);
    let w = |rng: &mut R| -(rng.gen_range(0..24) as f64) / 8.0;
    for _ in 0..rng.gen_range(1..=3 * n) {
        let src = rng.gen_range(0..n) as u32;
        let dst = rng.gen_range(0..n) as u32;
        let label = if rng.gen_bool(0.2) {
            None
        } else {
            Some(rng.gen_range(1..vocab) as u32)
        };
        let weight = w(rng);
        fsa.add_arc(src, dst, label, weight);
    }
    for s in 0..n {
        if rng.gen_bool(0.4) {
            let weight = w(rng);
            fsa.set_final(s as u32, weight);
        }
    }
    if fsa.finals.is_empty() {
        let s = rng.gen_range(0..n) as u32;
        fsa.set_final(s, 0.0);
    }
    fsa
}

fn eps_closure(fsa: &Fsa, set: &mut BTreeSet<u32>) {
    loop {
        let add: Vec<u32> = fsa
            .arcs
            .iter()
            .filter(|a| a.label.is_none() && set.contains(&a.src) && !set.contains(&a.dst))
            .map(|a| a.dst)
            .collect();
        if add.is_empty() {
            return;
        }
        set.extend(add);
    }
}

fn coaccessible(fsa: &Fsa) -> Vec<bool> {
    let mut ok = vec![false; fsa.num_states];
    for &f in fsa.finals.keys() {
        ok[f as usize] = true;
    }
    loop {
        let mut changed = false;
        for a in &fsa.arcs {
            if ok[a.dst as usize] && !ok[a.src as usize] {
                ok[a.src as usize] = true;
                changed = true;
            }
        }
        if !changed {
            return ok;
        }
    }
}

struct TrieNode {
    labels: Vec<u32>,
    children: Vec<Option<usize>>,
    states: BTreeSet<u32>,
    score: Option<Option<f64>>,
}

/// Best CTC path score by enumerating every frame labeling. Label strings are
/// scored with `Fsa::best_path_score`; prefixes no accepted string extends are
/// pruned. `None` when nothing is accepted.
pub fn brute_force_best(post: &PosteriorMatrix, fsa: &Fsa) -> Option<f64> {
    let v = post.vocab_size();
    let co = coaccessible(fsa);
    let mut start = BTreeSet::from([fsa.start]);
    eps_closure(fsa, &mut start);
    let mut trie = vec![TrieNode {
        labels: Vec::new(),
        children: vec![None; v],
        states: start,
        score: None,
    }];
    let mut best: Option<f64> = None;
    // Stack of (frame, trie node, last symbol, emission sum so far).
    let mut stack = vec![(0usize, 0usize, 0usize, 0.0f64)];
    while let Some((t, node, last, acc)) = stack.pop() {
        if t == post.frames() {
            if trie[node].score.is_none() {
                trie[node].score = Some(fsa.best_path_score(&trie[node].labels).unwrap());
            }
            if let Some(g) = trie[node].score.unwrap() {
                let total = acc + g;
                if best.map_or(true, |b| total > b) {
                    best = Some(total);
                }
            }
            continue;
        }
        for k in 0..v {
            let e = post.get(t, k) as f64;
            if e == f64::NEG_INFINITY {
                continue;
            }
            let next = if k == 0 || k == last {
                node
            } else {
                match trie[node].children[k] {
                    Some(c) => c,
                    None => {
                        let mut states: BTreeSet<u32> = fsa
                            .arcs
                            .iter()
                            .filter(|a| a.label == Some(k as u32) && trie[node].states.contains(&a.src))
                            .map(|a| a.dst)
                            .collect();
                        eps_closure(fsa, &mut states);
                        states.retain(|&s| co[s as usize]);
                        let mut labels = trie[node].labels.clone();
                        labels.push(k as u32);
                        trie.push(TrieNode {
                            labels,
                            children: vec![None; v],
                            states,
                            score: None,
                        });
                        let c = trie.len() - 1;
                        trie[node].children[k] = Some(c);
                        c
                    }
                }
            };
            if trie[next].states.is_empty() {
                continue;
            }
            stack.push((t + 1, next, k, acc + e));
        }
    }
    best
}

/// Levenshtein distance by plain memoized recursion.
pub fn edit_distance_recursive<T: PartialEq>(a: &[T], b: &[T]) -> u32 {
    fn go<T: PartialEq>(a: &[T], b: &[T], memo: &mut Vec<Vec<Option<u32>>>) -> u32 {
        if let Some(v) = memo[a.len()][b.len()] {
            return v;
        }
        let v = if a.is_empty() {
            b.len() as u32
        } else if b.is_empty() {
            a.len() as u32
        } else {
            let sub = go(&a[1..], &b[1..], memo) + u32::from(a[0] != b[0]);
            let del = go(&a[1..], b, memo) + 1;
            let ins = go(a, &b[1..], memo) + 1;
            sub.min(del).min(ins)
        };
        memo[a.len()][b.len()] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, &mut memo)
}

/// Random unit vectors as an embedding set with overlap rows.
pub fn random_embeddings<R: Rng>(rng: &mut R, n: usize, dim: usize, max_merge: usize) -> longalign_core::embedding::EmbeddingSet {
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let vecs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    longalign_core::embedding::EmbeddingSet::from_vectors(&ids, &vecs, max_merge).unwrap()
}

/// Minimum total alignment cost over every monotone segmentation, by
/// memoized recursion from the end, and the pair shapes of one optimum.
pub fn exhaustive_bitext(
    src: &longalign_core::embedding::EmbeddingSet,
    tgt: &longalign_core::embedding::EmbeddingSet,
    params: &longalign_core::bitext::BitextParams,
) -> (f64, Vec<(usize, usize, usize, usize)>) {
    let baseline = longalign_core::bitext::random_pair_baseline(src, tgt, params.seed).unwrap();
    let (n, m) = (src.n_sentences(), tgt.n_sentences());
    let cost = |i: usize, j: usize, a: usize, b: usize| -> f64 {
        if b == 0 {
            return params.penalty_del;
        }
        if a == 0 {
            return params.penalty_ins;
        }
        let u = src.span_vector(i - a, a, params.fallback).unwrap();
        let v = tgt.span_vector(j - b, b, params.fallback).unwrap();
        let c: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
        ((1.0 - c) / baseline).max(0.0) + params.penalty_merge * (a + b - 2) as f64
    };
    let mut shapes = vec![(1, 1), (1, 0), (0, 1)];
    for k in 2..=params.max_merge {
        shapes.push((1, k));
        shapes.push((k, 1));
    }
    // best[i][j]: cheapest segmentation of the prefixes (i, j).
    let mut best = vec![vec![(f64::INFINITY, (0usize, 0usize)); m + 1]; n + 1];
    best[0][0].0 = 0.0;
    for i in 0..=n {
        for j in 0..=m {
            for &(a, b) in &shapes {
                if a <= i && b <= j && (i, j) != (0, 0) {
                    let c = best[i - a][j - b].0 + cost(i, j, a, b);
                    if c < best[i][j].0 {
                        best[i][j] = (c, (a, b));
                    }
                }
            }
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (n, m);
    while (i, j) != (0, 0) {
        let (a, b) = best[i][j].1;
        pairs.push((i - a, a, j - b, b));
        i -= a;
        j -= b;
    }
    pairs.reverse();
    (best[n][m].0, pairs)
}
