//! Ingest utilities: topic cut lists, VAD segment files and the built-in
//! silence segmenter used for synthetic data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::posterior::PosteriorMatrix;
use crate::vocab::BLANK_ID;

pub const TARGET_SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutEntry {
    pub recording_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub topic_label: String,
}

/// Topic-level cut list for an external media tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutList {
    pub sample_rate_hz: u32,
    pub entries: Vec<CutEntry>,
}

/// Entry `i` spans `[t_i, t_{i+1})`, the last one ends at the recording end.
pub fn topic_cuts(recording_id: &str, metadata: &[(f64, String)], duration_s: f64) -> Result<CutList> {
    if metadata.is_empty() {
        return Err(Error::EmptyInput("no topic timestamps"));
    }
    for (i, (t, _)) in metadata.iter().enumerate() {
        if !(0.0..duration_s).contains(t) {
            return Err(Error::Format(format!(
                "topic timestamp {t} at index {i} outside [0, {duration_s})"
            )));
        }
        if i > 0 && *t <= metadata[i - 1].0 {
            return Err(Error::Order { index: i });
        }
    }
    let entries = metadata
        .iter()
        .enumerate()
        .map(|(i, (t, label))| CutEntry {
            recording_id: recording_id.to_string(),
            start_s: *t,
            end_s: metadata.get(i + 1).map_or(duration_s, |n| n.0),
            topic_label: label.clone(),
        })
        .collect();
    Ok(CutList {
        sample_rate_hz: TARGET_SAMPLE_RATE_HZ,
        entries,
    })
}

/// Speech region from an external VAD, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VadSegment {
    pub start_ms: u64,
    pub end_ms: u64,
}

pub fn read_vad(path: impl AsRef<Path>) -> Result<Vec<VadSegment>> {
    let segs: Vec<VadSegment> = jsonl::read_jsonl(path)?;
    for (i, s) in segs.iter().enumerate() {
        if s.end_ms <= s.start_ms || (i > 0 && s.start_ms < segs[i - 1].end_ms) {
            return Err(Error::Order { index: i });
        }
    }
    Ok(segs)
}

/// VAD segments as half-open frame ranges clamped to `frames`; empty ranges dropped.
pub fn vad_to_frames(segs: &[VadSegment], hop_ms: u32, frames: usize) -> Vec<(usize, usize)> {
    let hop = u64::from(hop_ms);
    segs.iter()
        .map(|s| {
            let a = (s.start_ms / hop) as usize;
            let b = s.end_ms.div_ceil(hop) as usize;
            (a.min(frames), b.min(frames))
        })
        .filter(|(a, b)| a < b)
        .collect()
}

pub fn frames_to_vad(segs: &[(usize, usize)], hop_ms: u32) -> Vec<VadSegment> {
    segs.iter()
        .map(|&(a, b)| VadSegment {
            start_ms: a as u64 * u64::from(hop_ms),
            end_ms: b as u64 * u64::from(hop_ms),
        })
        .collect()
}

/// Speech regions between runs of at least `min_gap` frames whose most likely
/// symbol is blank. Leading and trailing silence is dropped.
pub fn silence_segments(post: &PosteriorMatrix, min_gap: usize) -> Vec<(usize, usize)> {
    let speech: Vec<bool> = (0..post.frames()).map(|t| post.argmax(t) != BLANK_ID as usize).collect();
    let mut segs: Vec<(usize, usize)> = Vec::new();
    let mut t = 0;
    while t < speech.len() {
        if !speech[t] {
            t += 1;
            continue;
        }
        let start = t;
        let mut last_speech = t;
        let mut gap = 0;
        while t < speech.len() {
            if speech[t] {
                last_speech = t;
                gap = 0;
            } else {
                gap += 1;
                if gap >= min_gap.max(1) {
                    break;
                }
            }
            t += 1;
        }
        segs.push((start, last_speech + 1));
    }
    segs
}
