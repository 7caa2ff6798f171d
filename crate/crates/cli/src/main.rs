mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use error::CliError;

/// Recurrent video super-resolution with hidden-state attention.
///
/// `HSAVSR_THREADS` sets the worker count for frame-parallel stages
/// (default 1).
#[derive(Parser, Debug)]
#[command(name = "hsavsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Degrade a directory of HR frames into LR frames plus a manifest.
    Degrade(DegradeArgs),
    /// Generate the moving-shapes toy corpus.
    MakeToyData(ToyArgs),
    /// Stage-1 training from a key-value config file.
    Train(TrainArgs),
    /// Super-resolve a frame sequence.
    Infer(InferArgs),
    /// Hidden-state experiments.
    Lab(LabArgs),
    /// Write per-frame attention maps as PGM images.
    AttentionDump(DumpArgs),
    /// Finite-difference check of every differentiable primitive.
    Gradcheck(GradcheckArgs),
    /// Per-stage timing of one recurrent step.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, conflicts_with = "no_compress")]
    pub crf: Option<u32>,
    /// Skip the compression stage.
    #[arg(long)]
    pub no_compress: bool,
    /// Reuse the parameters and seed of an existing manifest.
    #[arg(long, conflicts_with_all = ["sigma", "delta", "r", "crf", "no_compress"])]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub clips: usize,
    #[arg(long, default_value_t = 5)]
    pub frames: usize,
    #[arg(long, default_value_t = 16)]
    pub lr_size: usize,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FlowArg {
    Zero,
    Block,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TraceKindArg {
    Raw,
    PostHsa,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Bypass the hidden-state attention module.
    #[arg(long)]
    pub no_hsa: bool,
    /// Apply HSA before warping instead of after.
    #[arg(long)]
    pub hsa_before_warp: bool,
    #[arg(long, value_enum, default_value_t = FlowArg::Block)]
    pub flow: FlowArg,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Record the hidden states into this directory.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TraceKindArg::Raw)]
    pub trace_kind: TraceKindArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PoolModeArg {
    Blur,
    Sharp,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("mode").required(true).multiple(false)
    .args(["zero_hidden", "combine", "inject", "pool_override"])))]
pub struct LabArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Force the hidden state to zero at every step.
    #[arg(long)]
    pub zero_hidden: bool,
    /// Replace the propagated state by the stored trace from step 2 on.
    #[arg(long, requires = "trace")]
    pub combine: bool,
    /// Overwrite the incoming state at this step (1-based) with the trace entry.
    #[arg(long, value_name = "STEP", requires = "trace")]
    pub inject: Option<usize>,
    /// Fill the pool with one variant of the given mode.
    #[arg(long, value_enum)]
    pub pool_override: Option<PoolModeArg>,
    #[arg(long, default_value_t = 0)]
    pub kernel_index: usize,
    /// Raw trace directory written by `infer --trace`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Standard deviation of Gaussian noise added to the injected state.
    #[arg(long, default_value_t = 0.0, requires = "inject")]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FlowArg::Block)]
    pub flow: FlowArg,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random shapes per primitive.
    #[arg(long, default_value_t = 3)]
    pub shapes: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Benchmark a saved model instead of a fresh one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub rb1: usize,
    #[arg(long, default_value_t = 28)]
    pub rb2: usize,
    /// Side of the square LR input (and hidden state).
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Degrade(a) => commands::degrade::run(a),
        Command::MakeToyData(a) => commands::toy::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Infer(a) => commands::infer::run(a),
        Command::Lab(a) => commands::infer::lab(a),
        Command::AttentionDump(a) => commands::infer::attention_dump(a),
        Command::Gradcheck(a) => commands::tools::gradcheck(a),
        Command::Bench(a) => commands::tools::bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
