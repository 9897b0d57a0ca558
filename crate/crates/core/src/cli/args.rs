use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::nn::{GatePlacement, MergeMode, SaEConfig};
use crate::tensor::DType;
use crate::train::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "saenet", version, about = "Split-and-excite residual networks: training, evaluation and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a preset on a record directory or PGM folder.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of a small target.
    Gradcheck(GradcheckArgs),
    /// Print the per-layer output shapes and parameter counts as CSV.
    Params(ParamsArgs),
    /// Write the stem convolution filters as PGM images.
    ExportFilters(ExportArgs),
    /// Write a seeded synthetic corpus in the CIFAR record layout.
    MakeSynthetic(SyntheticArgs),
}

/// Gate hyperparameters; applied to every gated stage of the preset.
#[derive(Debug, Clone, Args)]
pub struct GateArgs {
    /// Squeeze reduction ratio r.
    #[arg(long, default_value_t = 32)]
    pub reduction: usize,
    /// Number of parallel squeeze branches.
    #[arg(long, default_value_t = 4)]
    pub cardinality: usize,
    /// How branch outputs are merged: concat|sum.
    #[arg(long, default_value_t = MergeMode::Concat)]
    pub merge: MergeMode,
    /// Gate the residual branch output or the block input: output|input.
    #[arg(long, default_value_t = GatePlacement::OnBranchOutput)]
    pub gate_placement: GatePlacement,
}

impl GateArgs {
    pub fn sae(&self) -> SaEConfig {
        SaEConfig {
            reduction: self.reduction,
            cardinality: self.cardinality,
            merge: self.merge,
            placement: self.gate_placement,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    /// Initial learning rate.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// L2 penalty added to every gradient.
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Epochs between learning-rate decays.
    #[arg(long, default_value_t = 15)]
    pub step_epochs: usize,
    /// Multiplicative learning-rate decay.
    #[arg(long, default_value_t = 0.1)]
    pub decay: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Seed for initialization, shuffling and augmentation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Element type: f32|f64.
    #[arg(long, default_value_t = DType::F32)]
    pub dtype: DType,
}

impl OptimArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            step_epochs: self.step_epochs,
            decay: self.decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            dtype: self.dtype,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "sae-resnet-cifar")]
    pub preset: String,
    /// Directory with train.bin/test.bin (optionally dataset.csv) or labels.csv + PGM files.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for metrics.csv, best.ckpt and manifest.csv.
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub gate: GateArgs,
    /// Resize inputs to 224x224 (bilinear, half-pixel centres).
    #[arg(long)]
    pub resize_224: bool,
    /// Disable random crop and flip.
    #[arg(long)]
    pub no_augment: bool,
    /// Stop after this many optimizer steps [default: no limit].
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "sae-resnet-cifar")]
    pub preset: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory holding best.ckpt and manifest.csv.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DType::F32)]
    pub dtype: DType,
    #[command(flatten)]
    pub gate: GateArgs,
    #[arg(long)]
    pub resize_224: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Target: conv, grouped-conv, bn, fc, gate-se, gate-sae, block-plain,
    /// block-aggregated, block-se, block-sae or net.
    #[arg(long, default_value = "block-sae")]
    pub preset: String,
    #[arg(long, default_value_t = DType::F64)]
    pub dtype: DType,
    /// Maximum relative error [default: 1e-4 for f64, 5e-2 for f32].
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub gate: GateArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ParamsArgs {
    #[arg(long, default_value = "sae-resnet50")]
    pub preset: String,
    /// Classifier width [default: the preset's].
    #[arg(long)]
    pub classes: Option<usize>,
    /// Square input side for shape inference [default: the preset's].
    #[arg(long)]
    pub input_size: Option<usize>,
    #[command(flatten)]
    pub gate: GateArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long, default_value = "sae-resnet-cifar")]
    pub preset: String,
    /// Directory for the PGM files.
    #[arg(long, default_value = "filters")]
    pub out: PathBuf,
    /// Initialization seed, used when no checkpoint is given.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run directory holding best.ckpt and manifest.csv [default: fresh weights].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Classifier width of the checkpoint [default: the preset's].
    #[arg(long)]
    pub classes: Option<usize>,
    #[command(flatten)]
    pub gate: GateArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SyntheticArgs {
    /// Output directory for train.bin, test.bin and dataset.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Training samples per class.
    #[arg(long, default_value_t = 32)]
    pub per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub test_per_class: usize,
    /// Square image side.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Per-pixel noise amplitude in grey levels.
    #[arg(long, default_value_t = 24)]
    pub noise: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
