use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Builds sentence-aligned speech translation corpora from long recordings
/// with non-verbatim transcripts.
#[derive(Debug, Parser)]
#[command(name = "longalign", version)]
struct Cli {
    /// Seed for every randomized step; overrides a config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a raw transcript into speaker turns, sentences and tokens.
    PrepText(PrepTextArgs),
    /// Align source and target sentence embeddings and filter the pairs.
    BitextAlign(BitextArgs),
    /// Train a document-biased n-gram LM and write it as ARPA.
    TrainLm(TrainLmArgs),
    /// Decode segments with the biased LM and find anchor regions.
    FirstPass(FirstPassArgs),
    /// Sliding-window flexible alignment of sentences to audio.
    FlexAlign(FlexAlignArgs),
    /// Re-filter a triplet manifest, or report precision from a labeled sheet.
    Filter(FilterArgs),
    /// Partition a manifest into speaker/document-disjoint splits.
    Split(SplitArgs),
    /// Generate a synthetic bundle with gold alignments.
    Synth(SynthArgs),
    /// Score a pipeline run against the bundle's gold alignments.
    Eval(EvalArgs),
    /// Cross-check emitted triplets against pairs, spans and quality stats.
    Validate(ConfigArg),
    /// Run all configured stages.
    Pipeline(PipelineArgs),
    /// Topic cut list for an external media tool.
    Cuts(CutsArgs),
    /// Speech segments from posteriors by cutting on blank runs.
    Segment(SegmentArgs),
}

#[derive(Debug, Args)]
struct PrepTextArgs {
    #[arg(long)]
    transcript: PathBuf,
    #[arg(long)]
    doc_id: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    marker_pattern: Option<String>,
    /// Sentence terminator characters.
    #[arg(long)]
    terminators: Option<String>,
    /// Token-to-syllable TSV; romanizes sentence tokens.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BitextArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    /// Kept pairs.
    #[arg(long)]
    out: PathBuf,
    /// Dropped pairs; defaults to `<out>` with a `.dropped.jsonl` suffix.
    #[arg(long)]
    dropped: Option<PathBuf>,
    #[arg(long, default_value_t = longalign_core::bitext::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    max_merge: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainLmArgs {
    #[arg(long)]
    sentences: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Background corpus, one sentence per line.
    #[arg(long)]
    background: Option<PathBuf>,
    #[arg(long)]
    order: Option<usize>,
    /// Share of training mass given to the document.
    #[arg(long)]
    bias_lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FirstPassArgs {
    /// Posterior files, one per segment, in time order; segment offsets are
    /// cumulative. With `--vad`, a single file is cut into segments instead.
    #[arg(long, required = true, num_args = 1..)]
    posts: Vec<PathBuf>,
    #[arg(long)]
    vad: Option<PathBuf>,
    #[arg(long)]
    sentences: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    /// Anchor regions.
    #[arg(long)]
    out: PathBuf,
    /// Decoded hypothesis tokens with frame spans.
    #[arg(long)]
    hyp: Option<PathBuf>,
    #[arg(long)]
    beam: Option<f64>,
    #[arg(long)]
    expand_tokens: Option<usize>,
}

#[derive(Debug, Args)]
struct FlexAlignArgs {
    #[arg(long)]
    posts: PathBuf,
    #[arg(long)]
    sentences: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Anchor regions restricting each window's candidate sentences.
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    window_s: f64,
    #[arg(long, default_value_t = 20.0)]
    overlap_s: f64,
    #[arg(long, allow_hyphen_values = true)]
    skip_weight: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    filler_weight: Option<f64>,
    #[arg(long)]
    beam: Option<f64>,
    /// Log-probability floor for posteriors; `none` decodes them raw.
    #[arg(long, allow_hyphen_values = true, default_value_t = longalign_core::decode::DEFAULT_EMISSION_FLOOR.to_string())]
    emission_floor: String,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// Triplet manifest with quality stats.
    #[arg(long, conflicts_with = "labels", required_unless_present = "labels")]
    manifest: Option<PathBuf>,
    /// Labeled sheet: reports precision for each `--cer-thresholds` value.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Manifest the sheet was drawn from, for CER lookup; defaults to
    /// `triplets.jsonl` and `rejected.jsonl` next to the sheet.
    #[arg(long)]
    source: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    cer_thresholds: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rejected: Option<PathBuf>,
    #[arg(long)]
    max_cer: Option<f64>,
    #[arg(long)]
    max_consecutive_errors: Option<usize>,
    #[arg(long)]
    max_error_ratio: Option<f64>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON list of split specs; defaults to train/dev-asr/dev-mt/test.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// Synthesis config JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    p_sub: Option<f64>,
    #[arg(long)]
    p_reorder: Option<f64>,
    #[arg(long)]
    p_unspoken: Option<f64>,
    #[arg(long)]
    p_acoustic: Option<f64>,
    /// Write only an utterance manifest for split experiments to `<out>`.
    #[arg(long)]
    split_manifest: bool,
    /// Speakers in the split manifest.
    #[arg(long, default_value_t = 100)]
    speakers: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Pipeline output directory.
    #[arg(long)]
    run: PathBuf,
    /// Boundary tolerance in frames.
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Pipeline config JSON.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Pipeline config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input bundle; overrides the config.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CutsArgs {
    /// TSV of `timestamp_s<TAB>label` lines.
    #[arg(long)]
    metadata: PathBuf,
    #[arg(long)]
    recording: String,
    #[arg(long)]
    duration_s: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    posts: PathBuf,
    #[arg(long, default_value_t = 30)]
    min_gap: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(commands::EXIT_CONFIG);
        }
    }
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", render(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// Joins the cause chain, skipping causes the outer message already embeds.
fn render(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            out.push_str(": ");
            out.push_str(&msg);
        }
    }
    out
}
