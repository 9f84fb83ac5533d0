//! Command-line surface.

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use lightmamba_sim::{ScheduleMode, TileConfig};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "lightmamba",
    version,
    about = "Quantize, evaluate and simulate Mamba2 decode"
)]
pub struct Cli {
    /// Write the run manifest here instead of the command's default location.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded random FP model directory (config.json + weights.lmb).
    Init(InitArgs),
    /// Write a bigram token corpus, one id per line.
    GenCorpus(GenCorpusArgs),
    /// Rotate and quantize an FP model into a quantized-model directory.
    Quantize(QuantizeArgs),
    /// Perplexity (and argmax agreement against a reference) on a corpus.
    Eval(EvalArgs),
    /// Check that the rotated model reproduces the source logits.
    CheckEquivalence(CheckArgs),
    /// Run the accelerator performance model.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InitArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Model config JSON; the built-in toy config when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Residual channels given a large embedding scale.
    #[arg(long, default_value_t = 2)]
    pub outlier_channels: usize,
    #[arg(long, default_value_t = 8.0)]
    pub outlier_scale: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub vocab: usize,
    #[arg(long, default_value_t = 1000)]
    pub len: usize,
    /// Likely successors per token.
    #[arg(long, default_value_t = 4)]
    pub fanout: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    W8a8,
    W4a4,
}

impl Scheme {
    pub fn bits(self) -> u8 {
        match self {
            Scheme::W8a8 => 8,
            Scheme::W4a4 => 4,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum)]
    pub scheme: Scheme,
    /// Apply the Hadamard rotation recipe before quantizing.
    #[arg(long)]
    pub rotate: bool,
    /// Run the SSM in power-of-two INT8.
    #[arg(long)]
    pub quantize_ssm: bool,
    /// Group length for 4-bit weights and activations.
    #[arg(long, default_value_t = 128)]
    pub group_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(ArgGroup::new("kind").required(true).args(["fp", "quantized"])))]
pub struct EvalArgs {
    /// Model directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Token ids, one per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// The model directory holds FP weights.
    #[arg(long)]
    pub fp: bool,
    /// The model directory holds a quantized model.
    #[arg(long)]
    pub quantized: bool,
    /// FP model directory to compare argmax predictions against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CheckArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Rotation recipe JSON; the standard recipe when omitted.
    #[arg(long)]
    pub recipe: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub tokens: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted absolute logit difference.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SimBits {
    W4a4,
    W8a8,
    Fp16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleArg {
    Sequential,
    Reordered,
    #[value(name = "fine_tiled")]
    FineTiled,
    All,
}

impl ScheduleArg {
    pub fn modes(self) -> Vec<ScheduleMode> {
        match self {
            ScheduleArg::Sequential => vec![ScheduleMode::Sequential],
            ScheduleArg::Reordered => vec![ScheduleMode::Reordered],
            ScheduleArg::FineTiled => vec![ScheduleMode::FineTiled],
            ScheduleArg::All => ScheduleMode::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Board preset (`vck190`, `u280`) or hardware config JSON.
    #[arg(long)]
    pub hw: String,
    /// Model preset (`toy`, `mamba2-2.7b`) or model config JSON.
    #[arg(long)]
    pub model_config: String,
    #[arg(long, value_enum, default_value = "w4a4")]
    pub bits: SimBits,
    #[arg(long, value_enum, default_value = "fine_tiled")]
    pub schedule: ScheduleArg,
    /// SSM tile as `<heads>x<states>`.
    #[arg(long, default_value = "4x64")]
    pub tile: TileConfig,
    #[arg(long, default_value_t = 128)]
    pub group_size: u64,
    /// Leave out the online Hadamard transform.
    #[arg(long)]
    pub no_online_rotation: bool,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Include the per-stage timeline in the report.
    #[arg(long)]
    pub timeline: bool,
    /// Write a text rendering of the timeline.
    #[arg(long)]
    pub timeline_text: Option<PathBuf>,
}
