//! Frame-synchronous token log-posteriors and the `LPOST1` file format.
//!
//! Layout: `LPOST1\n`, an ASCII header `V=<int> T=<int> HOP_MS=<int>\n`, then
//! `T*V` little-endian `f32` values in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const POSTERIOR_MAGIC: &[u8] = b"LPOST1\n";

/// Tolerance on `|logsumexp(row)|` for a row to count as normalized.
pub const ROW_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    hop_ms: u32,
    frames: usize,
    vocab_size: usize,
    logp: Vec<f32>,
}

pub fn logsumexp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl PosteriorMatrix {
    pub fn new(hop_ms: u32, vocab_size: usize, logp: Vec<f32>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::Format("vocab size must be positive".into()));
        }
        if logp.is_empty() || logp.len() % vocab_size != 0 {
            return Err(Error::Format(format!(
                "{} values do not form rows of width {vocab_size}",
                logp.len()
            )));
        }
        let m = Self {
            hop_ms,
            frames: logp.len() / vocab_size,
            vocab_size,
            logp,
        };
        m.validate()?;
        Ok(m)
    }

    /// Builds a matrix from probability rows (not log), e.g. for tests.
    pub fn from_probs(hop_ms: u32, rows: &[Vec<f64>]) -> Result<Self> {
        let v = rows.first().map_or(0, Vec::len);
        let mut logp = Vec::with_capacity(rows.len() * v);
        for row in rows {
            if row.len() != v {
                return Err(Error::Format("ragged probability rows".into()));
            }
            logp.extend(row.iter().map(|p| p.ln() as f32));
        }
        Self::new(hop_ms, v, logp)
    }

    pub fn validate(&self) -> Result<()> {
        for t in 0..self.frames {
            let lse = logsumexp(self.row(t).iter().map(|&x| f64::from(x)));
            if !(lse.abs() <= ROW_NORM_TOLERANCE) {
                return Err(Error::Normalization {
                    row: t,
                    logsumexp: lse,
                });
            }
        }
        Ok(())
    }

    pub fn hop_ms(&self) -> u32 {
        self.hop_ms
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.logp[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    #[inline]
    pub fn get(&self, t: usize, token: usize) -> f32 {
        self.logp[t * self.vocab_size + token]
    }

    pub fn values(&self) -> &[f32] {
        &self.logp
    }

    /// Copies frames `start..end` into a new matrix.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames {
            return Err(Error::Format(format!(
                "frame slice {start}..{end} outside 0..{}",
                self.frames
            )));
        }
        Ok(Self {
            hop_ms: self.hop_ms,
            frames: end - start,
            vocab_size: self.vocab_size,
            logp: self.logp[start * self.vocab_size..end * self.vocab_size].to_vec(),
        })
    }

    /// Raises every log-probability below `min_logp` to it. Rows are no longer
    /// exactly normalized; a floor far below the row maxima keeps them within
    /// the validation tolerance.
    pub fn floored(&self, min_logp: f32) -> Self {
        Self {
            logp: self.logp.iter().map(|&x| x.max(min_logp)).collect(),
            ..self.clone()
        }
    }

    /// Index of the most probable token in frame `t`; ties go to the lower id.
    pub fn argmax(&self, t: usize) -> usize {
        let row = self.row(t);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }
}

fn parse_header(line: &str) -> Result<Vec<(String, usize)>> {
    line.split_whitespace()
        .map(|field| {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header field {field:?}")))?;
            let v = v
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad header value {field:?}")))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

pub(crate) fn header_value(fields: &[(String, usize)], key: &str) -> Result<usize> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Format(format!("header missing {key}")))
}

/// Reads magic + header line, returning the parsed header fields.
pub(crate) fn read_magic_header(
    r: &mut impl BufRead,
    magic: &[u8],
    path: &Path,
) -> Result<Vec<(String, usize)>> {
    let mut got = vec![0u8; magic.len()];
    r.read_exact(&mut got)
        .map_err(|_| Error::Format(format!("{}: truncated magic", path.display())))?;
    if got != magic {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let mut header = String::new();
    r.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    if !header.ends_with('\n') {
        return Err(Error::Format(format!("{}: truncated header", path.display())));
    }
    parse_header(header.trim_end_matches('\n'))
}

pub(crate) fn read_f32_le(r: &mut impl Read, n: usize, path: &Path) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format(format!("{}: trailing bytes", path.display())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_f32_le(w: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_posteriors(path: impl AsRef<Path>) -> Result<PosteriorMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_magic_header(&mut r, POSTERIOR_MAGIC, path)?;
    let v = header_value(&header, "V")?;
    let t = header_value(&header, "T")?;
    let hop = header_value(&header, "HOP_MS")?;
    if t == 0 || v == 0 {
        return Err(Error::Format(format!("{}: empty matrix", path.display())));
    }
    let hop = u32::try_from(hop).map_err(|_| Error::Format("HOP_MS out of range".into()))?;
    let logp = read_f32_le(&mut r, t * v, path)?;
    PosteriorMatrix::new(hop, v, logp)
}

/// Frame hop of a posterior file, read from its header only.
pub fn read_posterior_hop(path: impl AsRef<Path>) -> Result<u32> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let header = read_magic_header(&mut BufReader::new(file), POSTERIOR_MAGIC, path)?;
    u32::try_from(header_value(&header, "HOP_MS")?).map_err(|_| Error::Format("HOP_MS out of range".into()))
}

pub fn write_posteriors(matrix: &PosteriorMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(POSTERIOR_MAGIC).map_err(io)?;
    writeln!(
        w,
        "V={} T={} HOP_MS={}",
        matrix.vocab_size, matrix.frames, matrix.hop_ms
    )
    .map_err(io)?;
    write_f32_le(&mut w, &matrix.logp).map_err(io)?;
    w.flush().map_err(io)
}
