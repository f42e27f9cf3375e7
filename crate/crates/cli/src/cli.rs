//! Argument definitions for the `cmsc` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "cmsc",
    about = "Competitive multi-scale convolution networks: training, evaluation and analysis",
    version
)]
pub struct Cli {
    /// Worker threads for the data-parallel kernels
    /// (overrides the CMSC_THREADS environment variable).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Run every kernel sequentially.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a network and write reports plus the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Finite-difference check of every gradient on a built-in micro net.
    GradCheck(GradCheckArgs),
    /// Parameter-count breakdown of a preset or spec file.
    CountParams(CountParamsArgs),
    /// Deterministic center-mask tables and the equivalent drop rate.
    Masks(MasksArgs),
    /// Gamma-importance and co-adaptation reports from a checkpoint.
    Analyze(AnalyzeArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
#[value(rename_all = "lowercase")]
pub enum DatasetKind {
    /// Built-in synthetic glyph corpus (no files needed).
    Synth,
    Mnist,
    Cifar10,
    Cifar100,
    Svhn,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Synth => "synth",
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Svhn => "svhn",
        }
    }
}

#[derive(Args, Debug)]
pub struct NetworkSelection {
    /// Architecture preset: competitive-multiscale, competitive-inception,
    /// inception-style, competitive-singlescale, competitive-dropconnect,
    /// largest-filter-relu.
    #[arg(long, conflicts_with = "spec_file")]
    pub preset: Option<String>,

    /// JSON network spec instead of a preset.
    #[arg(long)]
    pub spec_file: Option<PathBuf>,

    /// Per-module widths: "desk", "full", one integer, or a comma list.
    #[arg(long, default_value = "desk")]
    pub width_profile: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub net: NetworkSelection,

    #[arg(long, value_enum, default_value = "synth")]
    pub dataset: DatasetKind,

    /// Directory with the dataset files (not needed for synth).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,

    /// Output directory for reports and checkpoints.
    #[arg(long)]
    pub out_dir: PathBuf,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Initial learning rate.
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,

    #[arg(long, default_value_t = 0.001)]
    pub lr_final: f64,

    /// Number of multiplicative decay steps between the endpoints.
    #[arg(long, default_value_t = 2)]
    pub lr_steps: usize,

    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,

    #[arg(long, default_value_t = 0.0005)]
    pub weight_decay: f64,

    /// Comma-separated seeds; several seeds train independent models and
    /// aggregate mean/std of the final test error.
    #[arg(long, default_value = "1")]
    pub seeds: String,

    #[arg(long)]
    pub no_shuffle: bool,

    /// Validation split: "auto", "none", a sample count, or a fraction.
    #[arg(long, default_value = "auto")]
    pub val: String,

    /// Dropout rate after each between-block pool (off when absent).
    #[arg(long)]
    pub dropout: Option<f64>,

    /// Skip the per-epoch test-set evaluation column.
    #[arg(long)]
    pub no_epoch_test: bool,

    /// Use only the first N training samples.
    #[arg(long)]
    pub limit_train: Option<usize>,

    /// Synthetic-corpus sizes (dataset = synth).
    #[arg(long, default_value_t = 6000)]
    pub synth_train: usize,

    #[arg(long, default_value_t = 1000)]
    pub synth_test: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long, value_enum, default_value = "synth")]
    pub dataset: DatasetKind,

    #[arg(long)]
    pub data_dir: Option<PathBuf>,

    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,

    #[arg(long, default_value_t = 1000)]
    pub synth_test: usize,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// 64 = strict (threshold 1e-5), 32 = loose documented mode
    /// (per-tensor relative L2, threshold 1e-2).
    #[arg(long, default_value_t = 64)]
    pub bits: u32,

    #[arg(long, default_value_t = 12345)]
    pub seed: u64,

    /// Also write the per-layer table as CSV.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CountParamsArgs {
    #[command(flatten)]
    pub net: NetworkSelection,

    /// Input shape as "c,h,w".
    #[arg(long, default_value = "3,32,32")]
    pub input_shape: String,

    #[arg(long, default_value_t = 10)]
    pub classes: usize,

    /// Machine-readable output.
    #[arg(long)]
    pub json: bool,

    /// Print every per-unit row, not just module subtotals.
    #[arg(long)]
    pub per_layer: bool,
}

#[derive(Args, Debug)]
pub struct MasksArgs {
    /// Filter sizes whose largest member defines the frame.
    #[arg(long, default_value = "1,3,5,7")]
    pub sizes: String,

    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long)]
    pub out_dir: PathBuf,

    /// Probe data for winner histograms; synth or a real dataset's test
    /// split. Without data files a seeded Gaussian probe is used.
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,

    #[arg(long)]
    pub data_dir: Option<PathBuf>,

    #[arg(long, default_value_t = 512)]
    pub probe_samples: usize,

    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
}
