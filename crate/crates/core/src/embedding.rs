//! Sentence embeddings and the `LEMB1` file format.
//!
//! Layout: `LEMB1\n`, header `N=<int> D=<int>\n`, then `N*D` little-endian
//! `f32`. A sidecar JSONL file (`<path>.jsonl`) maps each row, by line number,
//! to `{sent_id, merge_start, merge_len}`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::posterior::{header_value, read_f32_le, read_magic_header, write_f32_le};

pub const EMBEDDING_MAGIC: &[u8] = b"LEMB1\n";
pub const ROW_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingIndexEntry {
    pub sent_id: String,
    pub merge_start: usize,
    pub merge_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    rows: Vec<f32>,
    index: Vec<EmbeddingIndexEntry>,
    lookup: HashMap<(usize, usize), usize>,
    n_sentences: usize,
}

pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl EmbeddingSet {
    pub fn new(dim: usize, rows: Vec<f32>, index: Vec<EmbeddingIndexEntry>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dimension must be positive".into()));
        }
        if rows.len() != index.len() * dim {
            return Err(Error::Format(format!(
                "{} values but {} index rows of dim {dim}",
                rows.len(),
                index.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(index.len());
        for (r, e) in index.iter().enumerate() {
            if e.merge_len == 0 {
                return Err(Error::Format(format!("row {r}: merge_len must be >= 1")));
            }
            lookup.insert((e.merge_start, e.merge_len), r);
            let norm = rows[r * dim..(r + 1) * dim]
                .iter()
                .map(|&x| f64::from(x) * f64::from(x))
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > ROW_NORM_TOLERANCE {
                return Err(Error::Format(format!("row {r} has L2 norm {norm}")));
            }
        }
        let n_sentences = index.iter().filter(|e| e.merge_len == 1).count();
        for i in 0..n_sentences {
            if !lookup.contains_key(&(i, 1)) {
                return Err(Error::Format(format!("single-sentence row {i} missing")));
            }
        }
        if let Some(e) = index
            .iter()
            .find(|e| e.merge_start + e.merge_len > n_sentences)
        {
            return Err(Error::Format(format!(
                "span {}+{} beyond {n_sentences} sentences",
                e.merge_start, e.merge_len
            )));
        }
        Ok(Self {
            dim,
            rows,
            index,
            lookup,
            n_sentences,
        })
    }

    /// Builds single rows from `vectors` and overlap rows (normalized sums of
    /// consecutive sentence vectors) up to `max_merge`.
    pub fn from_vectors(sent_ids: &[String], vectors: &[Vec<f64>], max_merge: usize) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        let n = vectors.len();
        let mut rows = Vec::new();
        let mut index = Vec::new();
        for len in 1..=max_merge.max(1) {
            for start in 0..n.saturating_sub(len - 1) {
                let mut acc = vec![0.0; dim];
                for v in &vectors[start..start + len] {
                    if v.len() != dim {
                        return Err(Error::Dim {
                            left: dim,
                            right: v.len(),
                        });
                    }
                    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                }
                normalize(&mut acc);
                rows.extend(acc.iter().map(|&x| x as f32));
                index.push(EmbeddingIndexEntry {
                    sent_id: sent_ids[start].clone(),
                    merge_start: start,
                    merge_len: len,
                });
            }
        }
        Self::new(dim, rows, index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.index.len()
    }

    pub fn n_sentences(&self) -> usize {
        self.n_sentences
    }

    pub fn index(&self) -> &[EmbeddingIndexEntry] {
        &self.index
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.rows[r * self.dim..(r + 1) * self.dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.rows
    }

    pub fn single(&self, i: usize) -> &[f32] {
        self.row(self.lookup[&(i, 1)])
    }

    /// Unit vector for sentences `start..start+len`. Uses a precomputed row if
    /// one exists; otherwise, with `fallback`, the normalized mean of singles.
    pub fn span_vector(&self, start: usize, len: usize, fallback: bool) -> Result<Vec<f64>> {
        if let Some(&r) = self.lookup.get(&(start, len)) {
            return Ok(self.row(r).iter().map(|&x| f64::from(x)).collect());
        }
        if !fallback || len == 0 || start + len > self.n_sentences {
            return Err(Error::MissingEmbedding { start, len });
        }
        let mut acc = vec![0.0; self.dim];
        for i in start..start + len {
            acc.iter_mut()
                .zip(self.single(i))
                .for_each(|(a, &b)| *a += f64::from(b));
        }
        normalize(&mut acc);
        Ok(acc)
    }
}

pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".jsonl");
    PathBuf::from(s)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_magic_header(&mut r, EMBEDDING_MAGIC, path)?;
    let n = header_value(&header, "N")?;
    let d = header_value(&header, "D")?;
    let rows = read_f32_le(&mut r, n * d, path)?;
    let index: Vec<EmbeddingIndexEntry> = jsonl::read_jsonl(index_path(path))?;
    if index.len() != n {
        return Err(Error::Format(format!(
            "{}: header says N={n} but index has {} rows",
            path.display(),
            index.len()
        )));
    }
    EmbeddingSet::new(d, rows, index)
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(EMBEDDING_MAGIC).map_err(io)?;
    writeln!(w, "N={} D={}", set.n_rows(), set.dim).map_err(io)?;
    write_f32_le(&mut w, &set.rows).map_err(io)?;
    w.flush().map_err(io)?;
    jsonl::write_jsonl(index_path(path), &set.index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn overlap_row_count() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let set = EmbeddingSet::from_vectors(&ids(3), &v, 2).unwrap();
        assert_eq!(set.n_rows(), 5);
        assert_eq!(set.n_sentences(), 3);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let v: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..8).map(|j| ((i * 7 + j * 3) % 5) as f64 - 1.7).collect())
            .collect();
        let set = EmbeddingSet::from_vectors(&ids(6), &v, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.lemb");
        write_embeddings(&set, &p).unwrap();
        let back = read_embeddings(&p).unwrap();
        assert_eq!(back, set);
        assert!(back
            .values()
            .iter()
            .zip(set.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn fallback_span() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let set = EmbeddingSet::from_vectors(&ids(2), &v, 1).unwrap();
        assert!(matches!(
            set.span_vector(0, 2, false),
            Err(Error::MissingEmbedding { start: 0, len: 2 })
        ));
        let s = set.span_vector(0, 2, true).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s[0] - h).abs() < 1e-6 && (s[1] - h).abs() < 1e-6);
    }

    #[test]
    fn unnormalized_rows_rejected() {
        let idx = vec![EmbeddingIndexEntry {
            sent_id: "a".into(),
            merge_start: 0,
            merge_len: 1,
        }];
        assert!(EmbeddingSet::new(2, vec![1.0, 1.0], idx).is_err());
    }
}
