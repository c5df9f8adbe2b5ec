use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "partfuse",
    version,
    about = "Part-based face verification under makeup: crops, scoring, LLR fusion and evaluation protocols",
    after_help = "Set PARTFUSE_THREADS to cap worker threads (0 or unset = one per core). Log level via RUST_LOG."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align landmark sets and write one PNG per facial region.
    Crop(CropArgs),
    /// Add precomputed embeddings, or embeddings from an external provider, to a store.
    Import(ImportArgs),
    /// Cosine-score trial pairs region by region.
    Score(ScoreArgs),
    /// Fit LLR fusion weights on a per-region score table.
    FuseTrain(FuseTrainArgs),
    /// Apply a fusion model to a score table.
    FuseApply(FuseApplyArgs),
    /// EER, HTER and DET curve of a labelled score file.
    Eval(EvalArgs),
    /// Run an evaluation protocol over dataset manifests.
    Protocol(ProtocolArgs),
    /// Generate a synthetic dataset from a scenario file.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PadArg {
    Replicate,
    Black,
}

#[derive(Debug, Args)]
pub struct CropArgs {
    /// Crop strategy: holistic, parts4, thirds3, parts4+holistic or thirds3+holistic.
    #[arg(long)]
    pub strategy: String,
    /// Directory of landmark CSV files, one per image.
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Directory of face images named <image_id>.png / .jpg / .jpeg.
    #[arg(long)]
    pub images: PathBuf,
    /// Output directory for <image_id>_<region>.png crops and crops.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Square part box side relative to the tight landmark box.
    #[arg(long, default_value_t = 1.3)]
    pub margin: f64,
    /// Output crop side in pixels.
    #[arg(long, default_value_t = 224)]
    pub resize: u32,
    /// Hairline row in aligned coordinates, overriding the default upper-third height.
    #[arg(long)]
    pub hairline: Option<f64>,
    /// How to fill crop area outside the image.
    #[arg(long, value_enum, default_value_t = PadArg::Replicate)]
    pub pad: PadArg,
    /// Crop in original image coordinates without eye alignment.
    #[arg(long)]
    pub no_align: bool,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Store file to create or extend.
    #[arg(long)]
    pub store: PathBuf,
    /// Provider id the embeddings belong to.
    #[arg(long)]
    pub provider_id: String,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: usize,
    /// Channel mode the provider expects (rgb or grayscale).
    #[arg(long, default_value = "rgb")]
    pub channel_mode: String,
    /// Input side the provider expects, in pixels.
    #[arg(long, default_value_t = 224)]
    pub input_side: u32,
    /// Embedding CSV: subject_id,image_id,region,provider_id,dim,v0,...
    #[arg(long, conflicts_with_all = ["provider_cmd", "crops", "manifest"], required_unless_present = "provider_cmd")]
    pub input: Option<PathBuf>,
    /// External provider command, run as `<cmd> --in <crop.png> --region <tag>`.
    #[arg(long, requires_all = ["crops", "manifest"])]
    pub provider_cmd: Option<String>,
    /// Crop directory written by `partfuse crop`.
    #[arg(long)]
    pub crops: Option<PathBuf>,
    /// Manifest giving the subject of every image.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Embedding store file; repeat to merge several.
    #[arg(long, required = true)]
    pub store: Vec<PathBuf>,
    /// Trial list CSV: image_a,image_b,label.
    #[arg(long)]
    pub trials: PathBuf,
    /// Comma-separated regions or a strategy name.
    #[arg(long)]
    pub regions: String,
    /// region=provider lines; optional when the store holds a single provider.
    #[arg(long)]
    pub provider_map: Option<PathBuf>,
    /// Output score table CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseTrainArgs {
    /// Per-region score table from `partfuse score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// L2 penalty on the weights (not the bias).
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    /// Newton iteration cap.
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Dataset id recorded in the model.
    #[arg(long, default_value = "custom")]
    pub dataset_id: String,
    /// Keep a model that stopped before reaching the gradient tolerance.
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Debug, Args)]
pub struct FuseApplyArgs {
    /// Model file from `partfuse fuse-train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Score table holding at least the model's regions.
    #[arg(long)]
    pub scores: PathBuf,
    /// Output fused score CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Score file with one score column (fused, or a single region).
    #[arg(long)]
    pub fused: PathBuf,
    /// Report path; standard output when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// DET curve CSV output.
    #[arg(long)]
    pub det: Option<PathBuf>,
    /// Fixed decision threshold for FAR, FRR, HTER and accuracy.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolKind {
    Eer,
    Cross,
    Kfold,
    YmuMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PaperMode {
    /// Train fusion on every trial it is evaluated on (optimistic).
    WholeDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FoldUnitArg {
    Subject,
    Trial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    BeforeVsAfter,
    BeforeVsBefore,
    AfterVsAfter,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(value_enum)]
    pub kind: ProtocolKind,
    /// Manifest CSV; repeat to combine files.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    /// Embedding store file; repeat to merge several.
    #[arg(long, required = true)]
    pub store: Vec<PathBuf>,
    /// Comma-separated regions or a strategy name; default all regions the provider map covers.
    #[arg(long)]
    pub regions: Option<String>,
    /// region=provider lines; optional when the store holds a single provider.
    #[arg(long)]
    pub provider_map: Option<PathBuf>,
    /// Restrict to one dataset id (eer, kfold, ymu-matrix) or pick the source row (cross); repeatable.
    #[arg(long)]
    pub source: Vec<String>,
    /// Seed for fold plans and impostor sampling.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of subject folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// L2 penalty for fusion training.
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    /// Trial mode for `eer`.
    #[arg(long, value_enum, default_value_t = ModeArg::BeforeVsAfter)]
    pub mode: ModeArg,
    /// Train fusion on the whole dataset instead of cross-fitting over folds.
    #[arg(long, value_enum)]
    pub paper_mode: Option<PaperMode>,
    /// What k-fold splits partition.
    #[arg(long, value_enum, default_value_t = FoldUnitArg::Subject)]
    pub fold_unit: FoldUnitArg,
    /// Use a seeded sample of this many impostor trials instead of all cross-subject pairs.
    #[arg(long)]
    pub impostors: Option<usize>,
    /// Score the single listed region without fusion.
    #[arg(long)]
    pub no_fusion: bool,
    /// Report path; standard output when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Report results even when a fusion fit did not converge.
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    S1,
    S2,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario file (TOML).
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// Built-in scenario instead of a file.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for manifest.csv, embeddings.csv, provider_map.txt and trials.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}
