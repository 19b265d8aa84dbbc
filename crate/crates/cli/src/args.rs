use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kq_core::intervals::{FreezeStrategy, LambdaMode};
use kq_core::kquant::DEFAULT_GRID_STEPS;
use kq_core::QuantType;

#[derive(Debug, Parser)]
#[command(
    name = "kq",
    version,
    about = "k-quant quantization and quantization-preserving interval analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a tensor (or every tensor of a manifest) to KQB blocks.
    Quantize(QuantizeArgs),
    /// Dequantize a KQB file back to a KQT tensor.
    Dequantize(DequantizeArgs),
    /// Compute error-based intervals for one or more types, intersected.
    Intervals(IntervalsArgs),
    /// Widen an interval file per subblock.
    Expand(ExpandArgs),
    /// Intersect interval files computed from the same tensor.
    Intersect(IntersectArgs),
    /// Clamp trained weights into an interval file.
    Project(ProjectArgs),
    /// Measure how often noise inside the intervals changes the quantization.
    Overapprox(OverapproxArgs),
    /// Measure how often Gaussian noise changes the quantization.
    Defend(DefendArgs),
    /// Summarize an interval file.
    Stats(StatsArgs),
    /// Check that KQT, KQB and KQI files survive a write/read cycle.
    Roundtrip(RoundtripArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report destination; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct QuantArgs {
    /// Subblock search grid size.
    #[arg(long, default_value_t = DEFAULT_GRID_STEPS, value_parser = grid_steps)]
    pub grid_steps: usize,
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    pub trials: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// A KQT tensor, or a JSON manifest of tensors.
    #[arg(long)]
    pub input: PathBuf,
    /// Type for the tensor, or the default for manifest entries.
    #[arg(long = "type", default_value = "q4_k")]
    pub qtype: QuantType,
    /// Layer mix with glob rules choosing the type per tensor name.
    #[arg(long)]
    pub mix: Option<PathBuf>,
    /// Output KQB file, or output directory for a manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct DequantizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Shape of the output tensor; flat when omitted.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IntervalsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// One or more types; several are intersected.
    #[arg(long, alias = "type", value_delimiter = ',', required = true)]
    pub types: Vec<QuantType>,
    #[arg(long, default_value = "both")]
    pub freeze: FreezeStrategy,
    /// Expansion before intersecting: partial, full or a value in [0, 1].
    #[arg(long)]
    pub lambda: Option<LambdaMode>,
    /// Per-type λ overriding `--lambda`, as TYPE=VALUE; repeatable.
    #[arg(long, value_delimiter = ',', value_parser = type_lambda)]
    pub lambda_for: Vec<(QuantType, f64)>,
    /// Also measure over-approximation against every type.
    #[arg(long)]
    pub overapprox: bool,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    /// The tensor the intervals were computed from.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub intervals: PathBuf,
    /// Type whose subblock length and λ apply.
    #[arg(long = "type")]
    pub qtype: QuantType,
    #[arg(long, default_value = "partial")]
    pub lambda: LambdaMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IntersectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub intervals: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Weights to project, for example after a training step.
    #[arg(long)]
    pub input: PathBuf,
    /// The tensor the intervals were computed from.
    #[arg(long)]
    pub origin: PathBuf,
    #[arg(long)]
    pub intervals: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OverapproxArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Interval file to evaluate; computed per type and strategy when omitted.
    #[arg(long)]
    pub intervals: Option<PathBuf>,
    #[arg(long, alias = "type", value_delimiter = ',', required = true)]
    pub types: Vec<QuantType>,
    /// Strategies to compare when intervals are computed here.
    #[arg(long, value_delimiter = ',', default_value = "both")]
    pub freeze: Vec<FreezeStrategy>,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct DefendArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, alias = "type", value_delimiter = ',', required = true)]
    pub types: Vec<QuantType>,
    /// Noise standard deviations to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0,1e-5,1e-4,1e-3,1e-2")]
    pub sigma: Vec<f64>,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub intervals: PathBuf,
    /// Label for the report row.
    #[arg(long, default_value = "")]
    pub label: String,
    /// Strategy the intervals were built with, for the report.
    #[arg(long)]
    pub freeze: Option<FreezeStrategy>,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    /// Tensor to check; random blocks when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(
        long,
        alias = "type",
        value_delimiter = ',',
        default_value = "q2_k,q3_k,q4_k,q5_k,q6_k"
    )]
    pub types: Vec<QuantType>,
    /// Superblocks of random data per type when no input is given.
    #[arg(long, default_value_t = 16)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub report: ReportArgs,
}

fn type_lambda(s: &str) -> Result<(QuantType, f64), String> {
    let (t, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected TYPE=VALUE, got `{s}`"))?;
    let qt: QuantType = t.trim().parse().map_err(|e| format!("{e}"))?;
    match v.trim().parse::<f64>() {
        Ok(l) if (0.0..=1.0).contains(&l) => Ok((qt, l)),
        _ => Err(format!("λ for {qt} must be a number in [0, 1], got `{v}`")),
    }
}

fn grid_steps(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("expected a positive integer, got `{s}`")),
    }
}
