use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kcl_core::{ModalityMask, Mode, RuleKind};

#[derive(Debug, Parser)]
#[command(name = "kcl", version, about = "Training-free label completion over precomputed embeddings")]
pub struct Cli {
    /// Worker threads for grid search (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the completion loop and print a JSON report.
    Run(RunArgs),
    /// Compare the mutual rule against its one-sided variants on the same inputs.
    Ablate(RunArgs),
    /// Write a synthetic dataset with biased few-shot samples.
    Synth(SynthArgs),
    /// Score a saved report against ground-truth labels.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    ZeroShot,
    FewShot,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::ZeroShot => Mode::ZeroShot,
            ModeArg::FewShot => Mode::FewShot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Mutual,
    ImageToClass,
    ClassToImage,
}

impl From<RuleArg> for RuleKind {
    fn from(r: RuleArg) -> RuleKind {
        match r {
            RuleArg::Mutual => RuleKind::Mutual,
            RuleArg::ImageToClass => RuleKind::ImageToClass,
            RuleArg::ClassToImage => RuleKind::ClassToImage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Both,
    Text,
    Visual,
}

impl From<ModalityArg> for ModalityMask {
    fn from(m: ModalityArg) -> ModalityMask {
        match m {
            ModalityArg::Both => ModalityMask::BOTH,
            ModalityArg::Text => ModalityMask::TEXT_ONLY,
            ModalityArg::Visual => ModalityMask::VISUAL_ONLY,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "zero-shot")]
    pub mode: ModeArg,
    /// Test embeddings (EMB1 or .csv).
    #[arg(long)]
    pub features: PathBuf,
    /// Class text embeddings, one row per class.
    #[arg(long)]
    pub weights: PathBuf,
    /// Ground-truth test labels; adds `accuracy` to the report.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub cache_features: Option<PathBuf>,
    #[arg(long)]
    pub cache_labels: Option<PathBuf>,
    #[arg(long)]
    pub val_features: Option<PathBuf>,
    #[arg(long)]
    pub val_labels: Option<PathBuf>,
    /// Selection rule. For `ablate`, the variant compared against mutual
    /// (all rules when omitted).
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    /// Neighbours taken per class each step.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub steps: usize,
    /// Maximum absorbed samples per class.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_enum, default_value = "both")]
    pub modality: ModalityArg,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Pick hyperparameters by grid search on the validation split.
    #[arg(long)]
    pub search: bool,
    /// L2-normalize every loaded matrix instead of rejecting non-unit rows.
    #[arg(long)]
    pub normalize: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = 1)]
    pub shots: usize,
    /// Labeled validation samples per class; 0 writes no validation files.
    #[arg(long, default_value_t = 0)]
    pub val_per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.25)]
    pub sigma: f64,
    /// How far each shot's centre is pulled toward another class.
    #[arg(long, default_value_t = 0.6)]
    pub bias: f64,
    /// Largest-to-smallest test class ratio; above 1 gives a long tail.
    #[arg(long, default_value_t = 1.0)]
    pub imbalance: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Report written by `run` or `ablate`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
