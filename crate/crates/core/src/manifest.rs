use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::quality::QualityStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
    /// Unknown; excluded from gender-distribution metrics.
    U,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Gender::M => "M",
            Gender::F => "F",
            Gender::U => "U",
        };
        f.write_str(s)
    }
}

/// Links an emitted triplet back to the artifacts that justified it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Index of the kept bitext pair in the document's pair list.
    pub pair_index: usize,
    pub src_sent_ids: Vec<String>,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceManifestRow {
    pub utt_id: String,
    pub doc_id: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub duration_s: f64,
    pub start_s: f64,
    pub end_s: f64,
    pub text_src: String,
    pub text_tgt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl UtteranceManifestRow {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Format(format!("utterance {:?}: {msg}", self.utt_id)));
        if self.utt_id.is_empty() || self.doc_id.is_empty() || self.speaker_id.is_empty() {
            return bad("ids must be non-empty");
        }
        if !(self.end_s > self.start_s) {
            return bad("end_s must exceed start_s");
        }
        if (self.duration_s - (self.end_s - self.start_s)).abs() > 1e-3 {
            return bad("duration_s disagrees with end_s - start_s");
        }
        Ok(())
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceManifestRow>> {
    let rows: Vec<UtteranceManifestRow> = jsonl::read_jsonl(path)?;
    for r in &rows {
        r.validate()?;
    }
    Ok(rows)
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[UtteranceManifestRow]) -> Result<()> {
    for r in rows {
        r.validate()?;
    }
    jsonl::write_jsonl(path, rows)
}
