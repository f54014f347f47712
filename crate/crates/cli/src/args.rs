//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "toga", version, about = "Few-shot cache adapters trained under a graph teacher")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic embedding bank with planted foreground views.
    GenSynthetic(GenArgs),
    /// Train a student on one episode and export it.
    Train(TrainArgs),
    /// Score an exported student on a bank's query images.
    Eval(EvalArgs),
    /// Sweep named ablation arms over shot counts and seeds.
    Ablate(AblateArgs),
    /// Strip a training checkpoint down to its student file.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Views per image.
    #[arg(long, default_value_t = 18)]
    pub patches: usize,
    /// Planted foreground views per image.
    #[arg(long, default_value_t = 4)]
    pub foreground: usize,
    #[arg(long, default_value_t = 0.4)]
    pub sigma_f: f64,
    #[arg(long, default_value_t = 0.6)]
    pub sigma_b: f64,
    #[arg(long, default_value_t = 0.3)]
    pub sigma_t: f64,
    #[arg(long, default_value_t = 40)]
    pub images_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ViewsArg {
    Multiscale,
    Grid2x2,
    Grid3x3,
}

/// Training knobs. Each one, when given, overrides the config file.
#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    /// JSON training config; flags win over its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Cache branch weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Cache sharpness.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Graph branch weight in the mixture.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Focal term weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Logit scale.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub graph_layers: Option<usize>,
    #[arg(long)]
    pub graph_heads: Option<usize>,
    /// Fraction of patch nodes kept by the filter.
    #[arg(long)]
    pub keep: Option<f64>,
    #[arg(long)]
    pub use_mgt: Option<bool>,
    #[arg(long)]
    pub use_text_nodes: Option<bool>,
    #[arg(long)]
    pub gate_filter: Option<bool>,
    #[arg(long, value_enum)]
    pub views: Option<ViewsArg>,
    /// Gaussian feature jitter std; 0 disables it.
    #[arg(long)]
    pub jitter: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub shots: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Student output (`TOGS`).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV; defaults next to `--out`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Summary JSON; defaults next to `--out`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Also save the full checkpoint, teacher included, as JSON.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Pick α, β by grid search on held-out support-pool images first.
    #[arg(long)]
    pub search: bool,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub student: PathBuf,
    /// Override the stored cache weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Also write per-query logits as JSON.
    #[arg(long)]
    pub logits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// Comma-separated arm names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub arms: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub shots: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for one JSON file per `(arm, shots, seed)` run.
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
