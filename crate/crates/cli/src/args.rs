use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "stereokd", version, about = "Stereo matching with knowledge distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic stereo dataset with a manifest.
    GenData(GenDataArgs),
    /// Train a network on ground truth only (distill with points = spw).
    Train(TrainArgs),
    /// Train a student against a teacher.
    Distill(DistillArgs),
    /// Score a checkpoint (or precomputed predictions) on a dataset split.
    Evaluate(EvaluateArgs),
    /// Print parameter and MAC counts of a preset.
    Profile(ProfileArgs),
    /// Record a teacher's taps for a dataset split into a tap file.
    ExportTaps(ExportTapsArgs),
    /// Train one student per ablation row and tabulate test metrics.
    Ablation(AblationArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Total number of samples.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Samples assigned to the test split [default: count / 5].
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 32)]
    pub max_disp: usize,
    /// Foreground objects per scene.
    #[arg(long, default_value_t = 4)]
    pub objects: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Flags shared by every training command. Each one overrides a single field
/// of the experiment document given with `--config`.
#[derive(Args, Debug, Clone)]
pub struct TrainFlags {
    /// Experiment JSON document; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model preset, e.g. BB21-ED2-N16 or DSNet+Attention (preset).
    #[arg(long)]
    pub preset: Option<String>,
    /// Maximum disparity D (model.max_disparity).
    #[arg(long)]
    pub max_disp: Option<usize>,
    /// Dataset directory or manifest (train.dataset).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// train.epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// train.batch_size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate (train.initial_lr).
    #[arg(long)]
    pub lr: Option<f32>,
    /// Comma-separated zero-based epochs (train.lr_milestones).
    #[arg(long, value_delimiter = ',')]
    pub lr_milestones: Option<Vec<usize>>,
    /// train.lr_decay_factor
    #[arg(long)]
    pub lr_decay: Option<f32>,
    /// train.crop_height
    #[arg(long)]
    pub crop_height: Option<usize>,
    /// train.crop_width
    #[arg(long)]
    pub crop_width: Option<usize>,
    /// train.seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// train.bn_momentum
    #[arg(long)]
    pub bn_momentum: Option<f32>,
    /// Validate every N epochs, 0 = only after the last (train.validate_every).
    #[arg(long)]
    pub validate_every: Option<usize>,
    /// Keep only the final checkpoint (train.checkpoint_every_epoch = false).
    #[arg(long)]
    pub final_checkpoint_only: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Loss for the ground-truth term, e.g. spw=logl1 (train.losses).
    #[arg(long)]
    pub losses: Option<String>,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    /// none | oracle | checkpoint:PATH | taps:PATH (train.teacher).
    #[arg(long)]
    pub teacher: Option<String>,
    /// Comma-separated terms from fe, cv, ca, spw, stpw (train.points).
    #[arg(long)]
    pub points: Option<String>,
    /// Comma-separated term=loss overrides, loss one of
    /// smoothl1, logl1, cosine, kld (train.losses).
    #[arg(long)]
    pub losses: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint to evaluate.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of precomputed `<id>.pfm` disparity maps instead of a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write disparity PFMs and error-map PNGs per sample.
    #[arg(long)]
    pub images: bool,
    /// Error (px) mapped to full red in error maps.
    #[arg(long, default_value_t = 5.0)]
    pub max_error: f32,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[arg(long, default_value = "BB21-ED2-N16")]
    pub preset: String,
    #[arg(long, default_value_t = 544)]
    pub height: usize,
    #[arg(long, default_value_t = 960)]
    pub width: usize,
    /// Also write the per-module breakdown as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportTapsArgs {
    /// oracle | checkpoint:PATH
    #[arg(long)]
    pub teacher: String,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Maximum disparity of the oracle teacher.
    #[arg(long, default_value_t = 192)]
    pub max_disp: usize,
    /// Output tap file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblationArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Teacher for the distillation rows (train.teacher).
    #[arg(long)]
    pub teacher: Option<String>,
    /// Comma-separated 1-based rows to run [default: all].
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<usize>>,
}
