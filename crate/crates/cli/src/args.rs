use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "asot", version, about = "Temporally consistent action segmentation with unbalanced GW transport")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve and decode one feature file or a whole dataset directory.
    Decode(DecodeArgs),
    /// Self-train an encoder and action embeddings on a dataset.
    Train(TrainArgs),
    /// Score predicted label files against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Time solver iterations over a range of sequence lengths.
    Bench(BenchArgs),
    /// Render label files as SVG colour barcodes.
    Plot(PlotArgs),
}

/// Overrides for solver settings; unset flags keep the base value.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverFlags {
    /// JSON file with solver settings (see schema/solver_config.schema.json).
    #[arg(long, value_name = "FILE")]
    pub solver_config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Band radius as a fraction of the sequence length.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub n_iter: Option<usize>,
    #[arg(long)]
    pub stop_tol: Option<f64>,
    /// Disable step halving after repeated objective increases.
    #[arg(long)]
    pub no_adaptive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputKind {
    /// Frame features scored against `--actions` by cosine cost.
    Features,
    /// Frame features embedded by `--checkpoint`.
    Encoded,
    /// Classifier logits, min-max mapped to cost.
    Logits,
    /// A ready-made cost matrix.
    Cost,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// A `.feat` file, or a dataset directory with a `features/` subdirectory.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// How to turn the input into a cost matrix. Inferred from `--actions` or
    /// `--checkpoint` when omitted.
    #[arg(long, value_enum)]
    pub kind: Option<InputKind>,
    #[arg(long, value_name = "FILE", conflicts_with = "checkpoint")]
    pub actions: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Weight of the temporal prior added to the cost.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Also write the transport plan as a feature file.
    #[arg(long)]
    pub dump_plan: bool,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory with `features/` and optionally `labels/`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// JSON training config (see schema/train_config.schema.json).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_actions: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub frames_per_video: Option<usize>,
    #[arg(long)]
    pub batch_videos: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub out_dim: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    PerVideo,
    Full,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted `.txt` label files.
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    /// Directory of ground-truth `.txt` label files, or a dataset directory.
    #[arg(long, value_name = "DIR")]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    pub mode: ModeArg,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Frame features drawn around action prototypes.
    Dataset,
    /// Noisy block cost matrices.
    Blocks,
    /// Noisy classifier logits.
    Logits,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Dataset)]
    pub kind: SynthKind,
    /// JSON spec for `dataset` kind (see schema/synth_spec.schema.json).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_videos: Option<usize>,
    #[arg(long)]
    pub n_actions: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Mean frames per video (dataset) or exact frames (blocks, logits).
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Dirichlet concentration for class proportions or segment lengths.
    #[arg(long)]
    pub concentration: Option<f64>,
    #[arg(long)]
    pub fixed_order: bool,
    #[arg(long)]
    pub no_repeats: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000,16000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 19)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Label files, or directories of `.txt` label files.
    #[arg(long, value_name = "PATH", num_args = 1.., required = true)]
    pub labels: Vec<PathBuf>,
    /// Ground-truth directory; a matching file adds a reference row.
    #[arg(long, value_name = "DIR")]
    pub gt: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}
