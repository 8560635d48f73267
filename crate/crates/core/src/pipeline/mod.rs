//! Corpus-construction pipeline: configuration, stage orchestration, stage
//! manifests, output validation and evaluation against synthetic gold.
//!
//! Input bundle layout: `vocab.txt`, optional `speakers.jsonl`, and
//! `docs/<doc>/{transcript.txt, translation.txt, src.lemb, tgt.lemb,
//! audio.lpost}` with an optional `vad.jsonl` per document.

pub mod ingest;
mod stages;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchor::FirstPassConfig;
use crate::bitext::{BitextParams, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::lm::LmConfig;
use crate::quality::FilterThresholds;
use crate::splits::{default_specs, SplitConfig, SplitSpec};
use crate::textproc::{DEFAULT_MARKER_PATTERN, DEFAULT_TERMINATORS};

pub use stages::{evaluate_run, read_assignment, validate_run, AlignRow, AlignStatus, DocEval, EvalReport, RejectedRow, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    PrepText,
    BitextAlign,
    TrainLm,
    FirstPass,
    FlexAlign,
    Filter,
    Split,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::PrepText,
        Stage::BitextAlign,
        Stage::TrainLm,
        Stage::FirstPass,
        Stage::FlexAlign,
        Stage::Filter,
        Stage::Split,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::PrepText => "prep-text",
            Stage::BitextAlign => "bitext-align",
            Stage::TrainLm => "train-lm",
            Stage::FirstPass => "first-pass",
            Stage::FlexAlign => "flex-align",
            Stage::Filter => "filter",
            Stage::Split => "split",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub marker_pattern: String,
    /// Sentence terminator characters.
    pub terminators: String,
    /// Token -> syllable lexicon (TSV); when set, sentence tokens are romanized.
    pub lexicon: Option<PathBuf>,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            marker_pattern: DEFAULT_MARKER_PATTERN.to_string(),
            terminators: DEFAULT_TERMINATORS.iter().collect(),
            lexicon: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BitextStageConfig {
    #[serde(flatten)]
    pub params: BitextParams,
    /// Pairs with cost above this are dropped.
    pub threshold: f64,
}

impl Default for BitextStageConfig {
    fn default() -> Self {
        Self {
            params: BitextParams::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LmStageConfig {
    #[serde(flatten)]
    pub lm: LmConfig,
    /// Background corpus, one sentence per line.
    pub background: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FirstPassStageConfig {
    pub criteria: crate::anchor::AnchorCriteria,
    pub expand_tokens: usize,
    pub beam: Option<f64>,
    /// Built-in segmenter: minimum run of blank-dominant frames that ends a
    /// segment. Used when a document has no `vad.jsonl`.
    pub vad_min_gap: usize,
}

impl Default for FirstPassStageConfig {
    fn default() -> Self {
        let fp = FirstPassConfig::default();
        Self {
            criteria: fp.criteria,
            expand_tokens: fp.expand_tokens,
            beam: fp.beam,
            vad_min_gap: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlexStageConfig {
    pub window_s: f64,
    pub overlap_s: f64,
    pub skip_weight: f64,
    pub filler_weight: f64,
    pub beam: Option<f64>,
    /// `None` decodes the raw posteriors.
    pub emission_floor: Option<f64>,
}

impl Default for FlexStageConfig {
    fn default() -> Self {
        let w = crate::decode::WindowConfig::default();
        Self {
            window_s: 60.0,
            overlap_s: 20.0,
            skip_weight: w.skip_weight,
            filler_weight: w.filler_weight,
            beam: w.beam,
            emission_floor: Some(crate::decode::DEFAULT_EMISSION_FLOOR),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterStageConfig {
    #[serde(flatten)]
    pub thresholds: FilterThresholds,
    /// CER bin edges for the labeling sheet.
    pub bin_edges: Vec<f64>,
    pub per_bin: usize,
}

impl Default for FilterStageConfig {
    fn default() -> Self {
        Self {
            thresholds: FilterThresholds::default(),
            bin_edges: vec![0.05, 0.1, 0.2, 0.3, 0.5],
            per_bin: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitStageConfig {
    pub specs: Vec<SplitSpec>,
    #[serde(flatten)]
    pub config: SplitConfig,
}

impl Default for SplitStageConfig {
    fn default() -> Self {
        Self {
            specs: default_specs(),
            config: SplitConfig::default(),
        }
    }
}

fn all_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Stages to run, in pipeline order. Later stages read earlier outputs
    /// from `output_dir`.
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub prep: PrepConfig,
    #[serde(default)]
    pub bitext: BitextStageConfig,
    #[serde(default)]
    pub lm: LmStageConfig,
    #[serde(default)]
    pub first_pass: FirstPassStageConfig,
    #[serde(default)]
    pub flex: FlexStageConfig,
    #[serde(default)]
    pub filter: FilterStageConfig,
    #[serde(default)]
    pub split: SplitStageConfig,
}

impl PipelineConfig {
    pub fn new(input_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            input_dir: input_dir.into(),
            output_dir: output_dir.into(),
            seed,
            stages: all_stages(),
            prep: PrepConfig::default(),
            bitext: BitextStageConfig::default(),
            lm: LmStageConfig::default(),
            first_pass: FirstPassStageConfig::default(),
            flex: FlexStageConfig::default(),
            filter: FilterStageConfig::default(),
            split: SplitStageConfig::default(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        jsonl::read_json(path)
    }

    /// Static checks; input files are checked when each stage starts.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("no stages selected".into()));
        }
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "stages must be listed once each, in pipeline order".into(),
            ));
        }
        if !self.input_dir.is_dir() {
            return Err(Error::Config(format!(
                "input directory {} does not exist",
                self.input_dir.display()
            )));
        }
        if self.prep.terminators.is_empty() {
            return Err(Error::Config("no sentence terminators".into()));
        }
        crate::textproc::MarkerPattern::new(&self.prep.marker_pattern)?;
        if !self.bitext.threshold.is_finite() {
            return Err(Error::Config("bitext threshold must be finite".into()));
        }
        if !(self.flex.window_s > self.flex.overlap_s && self.flex.overlap_s >= 0.0) {
            return Err(Error::Config(format!(
                "window {} s must exceed overlap {} s",
                self.flex.window_s, self.flex.overlap_s
            )));
        }
        if let Some(f) = self.flex.emission_floor {
            // A floor near zero would outweigh real evidence.
            if !(f.is_finite() && f <= -5.0) {
                return Err(Error::Config(format!("emission floor {f} must be finite and at most -5")));
            }
        }
        let total: f64 = self.split.specs.iter().map(|s| s.target_fraction).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Failure of a pipeline run: bad configuration or a failing stage.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(#[source] Error),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileDigest {
    /// `"input"` or `"output"`.
    pub root: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub summary: serde_json::Value,
}

/// Written to `report.json`. Holds no timings so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub docs: Vec<String>,
    pub seed: u64,
    pub stages: Vec<StageSummary>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Exclusive ownership of an output directory; removed on drop.
struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory is locked by another run ({})",
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Paths of the pipeline's own outputs.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub root: PathBuf,
}

impl OutputPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn doc_dir(&self, doc: &str) -> PathBuf {
        self.root.join("docs").join(doc)
    }

    pub fn doc_file(&self, doc: &str, name: &str) -> PathBuf {
        self.doc_dir(doc).join(name)
    }

    pub fn triplets(&self) -> PathBuf {
        self.root.join("triplets.jsonl")
    }

    pub fn rejected(&self) -> PathBuf {
        self.root.join("rejected.jsonl")
    }

    pub fn label_sheet(&self) -> PathBuf {
        self.root.join("label_sheet.jsonl")
    }

    pub fn assignment(&self) -> PathBuf {
        self.root.join("assignment.json")
    }

    pub fn split_file(&self, name: &str) -> PathBuf {
        self.root.join("splits").join(format!("{name}.jsonl"))
    }

    pub fn manifest(&self, stage: Stage) -> PathBuf {
        self.root.join("manifests").join(format!("{}.json", stage.name()))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

/// Document ids: sorted names of the subdirectories of `<input>/docs`.
pub fn discover_docs(input_dir: &Path) -> Result<Vec<String>> {
    let dir = input_dir.join("docs");
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut docs = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(&dir, e))?;
        if e.path().is_dir() {
            docs.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    docs.sort();
    if docs.is_empty() {
        return Err(Error::EmptyInput("input bundle has no documents"));
    }
    Ok(docs)
}

fn digests(root_name: &str, root: &Path, paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    let mut out: Vec<FileDigest> = paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                root: root_name.to_string(),
                path: p
                    .strip_prefix(root)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace('\\', "/"),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

/// Runs the configured stages in order. Each stage writes its outputs and
/// `manifests/<stage>.json`; the first failure aborts the run, leaving the
/// outputs written so far in place.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<PipelineReport, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let docs = discover_docs(&cfg.input_dir).map_err(PipelineError::Config)?;
    let _lock = OutputLock::acquire(&cfg.output_dir).map_err(PipelineError::Config)?;
    let out = OutputPaths::new(&cfg.output_dir);
    let mut summaries = Vec::new();
    for &stage in &cfg.stages {
        tracing::info!(%stage, "running stage");
        let fail = |source: Error| PipelineError::Stage { stage, source };
        let outcome = stages::run_stage(stage, cfg, &docs, &out).map_err(fail)?;
        let manifest = StageManifest {
            stage,
            seed: cfg.seed,
            config: stages::stage_config(stage, cfg),
            inputs: digests("input", &cfg.input_dir, &outcome.inputs).map_err(fail)?,
            outputs: digests("output", &cfg.output_dir, &outcome.outputs).map_err(fail)?,
            summary: outcome.summary.clone(),
        };
        let mpath = out.manifest(stage);
        if let Some(parent) = mpath.parent() {
            fs::create_dir_all(parent).map_err(|e| fail(Error::io(parent, e)))?;
        }
        jsonl::write_json(&mpath, &manifest).map_err(fail)?;
        summaries.push(StageSummary {
            stage,
            summary: outcome.summary,
        });
    }
    let report = PipelineReport {
        docs,
        seed: cfg.seed,
        stages: summaries,
    };
    jsonl::write_json(out.report(), &report).map_err(|e| PipelineError::Stage {
        stage: *cfg.stages.last().expect("validated non-empty"),
        source: e,
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("align".parse::<Stage>().is_err());
    }

    #[test]
    fn config_defaults_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let json = format!(
            r#"{{"input_dir": {:?}, "output_dir": "out", "flex": {{"window_s": 30}}}}"#,
            dir.path()
        );
        let cfg: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg.stages, Stage::ALL.to_vec());
        assert_eq!(cfg.flex.window_s, 30.0);
        assert_eq!(cfg.flex.overlap_s, 20.0);
        assert_eq!(cfg.bitext.threshold, 0.627);
        cfg.validate().unwrap();

        let mut bad = cfg.clone();
        bad.stages = vec![Stage::FlexAlign, Stage::FirstPass];
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = cfg;
        bad.flex.overlap_s = 40.0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(Error::Config(_))));
        drop(a);
        OutputLock::acquire(dir.path()).unwrap();
    }
}
