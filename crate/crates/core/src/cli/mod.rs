//! The `maefuse` command line: synthetic data, pretraining, guided training, fusion,
//! evaluation and ablation studies.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 missing prerequisite
//! artifact, 4 data mismatch.

mod commands;
mod config;

pub use config::{PlanOverrides, PlanSet, Paths, ResolvedConfig, ResolvedPlans, RunConfig};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "maefuse", version, about = "Infrared/visible image fusion with an MAE encoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus of registered visible/infrared pairs.
    Synth(SynthArgs),
    /// Pretrain the encoder (masked autoencoding) or the decoder (frozen encoder).
    Pretrain(PretrainArgs),
    /// Guided training of the fusion modules.
    Train(TrainArgs),
    /// Fuse one pair or two directories of pairs.
    Fuse(FuseArgs),
    /// Score fused images with CC, SCD, PSNR, Nabf and NLPD.
    Eval(EvalArgs),
    /// Run an ablation study.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of pairs.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output root; receives vi/, ir/ and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// The size must be a multiple of this patch size.
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    /// Add a saturated patch to every visible image.
    #[arg(long, default_value_t = false)]
    pub overexposure: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PretrainStage {
    Mae,
    Decoder,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long, value_enum)]
    pub stage: PretrainStage,
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from this stage's own checkpoint.
    #[arg(long, default_value_t = false)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FusionTarget {
    Cfm,
    Mfm,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["hierarchical", "target"])))]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// CFM, then MFM with the CFM frozen.
    #[arg(long, default_value_t = false)]
    pub hierarchical: bool,
    /// Train a single module.
    #[arg(long, value_enum)]
    pub target: Option<FusionTarget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColorArg {
    Gray,
    YcbcrReattach,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathArg {
    Full,
    CfmOnly,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Checkpoint directory (containing manifest.json).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Visible image or directory.
    #[arg(long)]
    pub vi: PathBuf,
    /// Infrared image or directory.
    #[arg(long)]
    pub ir: PathBuf,
    /// Output image or directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ColorArg::Gray)]
    pub color: ColorArg,
    /// Fusion path feeding the decoder.
    #[arg(long, value_enum, default_value_t = PathArg::Full)]
    pub path: PathArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub vi: PathBuf,
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub fused: PathBuf,
    /// Report path; `.csv` and `.json` versions are written.
    #[arg(long)]
    pub out_report: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    TwoStage,
    Hierarchy,
    FeatureProbe,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    #[arg(long)]
    pub config: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::WeightImport(_) | Error::InvalidConversion { .. } => 2,
        Error::MissingPrerequisite(_) => 3,
        Error::Data(_) | Error::Shape(_) => 4,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
