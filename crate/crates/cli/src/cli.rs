use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use protoseg_core::classifier::DEFAULT_TAU_SIM;
use protoseg_core::mask_agg::DEFAULT_TAU_AREA;
use protoseg_core::protocol::DEFAULT_THETA_OVERLAP;
use protoseg_core::prototype_bank::{DEFAULT_SUBCLUSTERS, DEFAULT_VARIANCE_THRESHOLD};

#[derive(Debug, Parser)]
#[command(
    name = "protoseg",
    version,
    about = "Training-free class-incremental semantic segmentation over mask proposals and prototype banks"
)]
pub struct Cli {
    /// Worker threads for per-file work (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge the mask proposals of each .smsk file into a .sagg region map.
    Aggregate(AggregateArgs),
    /// Attach ground-truth classes to regions by majority overlap.
    Label(LabelArgs),
    /// Register classes from labelled embeddings into a prototype bank.
    Prototypes(PrototypesArgs),
    /// Classify region embeddings against a prototype bank.
    Classify(ClassifyArgs),
    /// Score predicted label maps against ground truth.
    Evaluate(EvaluateArgs),
    /// Run a full incremental protocol from a config file.
    Protocol(ProtocolArgs),
    /// Render a label map as a palette PNG.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Directory of .smsk mask files.
    #[arg(long)]
    pub masks: PathBuf,
    /// Output directory for .sagg region maps.
    #[arg(long)]
    pub out: PathBuf,
    /// Masks covering at least this fraction of the image are dropped.
    #[arg(long, default_value_t = DEFAULT_TAU_AREA)]
    pub tau_area: f64,
    /// Masks claiming fewer new pixels than this are skipped.
    #[arg(long, default_value_t = 1)]
    pub min_pixels: u64,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Directory of .sagg region maps.
    #[arg(long)]
    pub agg: PathBuf,
    /// Directory of .sagg ground-truth class maps with matching names.
    #[arg(long)]
    pub gt: PathBuf,
    /// Minimum share of a region's labelled pixels the winning class must cover.
    #[arg(long, default_value_t = DEFAULT_THETA_OVERLAP)]
    pub theta_overlap: f64,
    /// Output region-label TSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrototypesArgs {
    /// .semb embeddings file.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Region-label TSV; without it the classes stored in the embeddings file are used.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Output .spro bank.
    #[arg(long)]
    pub bank: PathBuf,
    /// Classes whose variance score exceeds this get k-means sub-prototypes.
    #[arg(long, default_value_t = DEFAULT_VARIANCE_THRESHOLD)]
    pub variance_threshold: f64,
    /// Number of sub-prototypes for high-variance classes.
    #[arg(long, default_value_t = DEFAULT_SUBCLUSTERS)]
    pub k: usize,
    /// k-means seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Step number recorded for the new classes (default: next step of the bank).
    #[arg(long)]
    pub step: Option<u32>,
    /// Register only these classes (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<u16>,
    /// Add to an existing bank instead of creating a new one.
    #[arg(long)]
    pub append: bool,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// .spro prototype bank.
    #[arg(long)]
    pub bank: PathBuf,
    /// .semb embeddings file.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Similarity below which a region is labelled background.
    #[arg(long, default_value_t = DEFAULT_TAU_SIM)]
    pub tau_sim: f64,
    /// Output predictions TSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of .sagg region maps; with --maps, predicted label maps are rendered.
    #[arg(long, requires = "maps")]
    pub agg: Option<PathBuf>,
    /// Output directory for predicted .sagg label maps.
    #[arg(long, requires = "agg")]
    pub maps: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of predicted .sagg label maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth .sagg label maps with matching names.
    #[arg(long)]
    pub gt: PathBuf,
    /// Leave background out of the means.
    #[arg(long)]
    pub exclude_bg: bool,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// Pipeline config (key = value lines). Defaults: tau_area 0.9, tau_sim 0.5,
    /// variance_threshold 0.4, k 5, theta_overlap 0.5, seed 0.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for snapshots and reports.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// .sagg label map.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
}
