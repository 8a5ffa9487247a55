use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "decpi", version, about = "Policy iteration for infinite-horizon DEC-POMDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a solver and write the iteration log, checkpoints and a summary.
    Solve(SolveArgs),
    /// Print the value table of a controller and its value at b₀.
    Eval(EvalArgs),
    /// Estimate a controller's value by simulation.
    Simulate(SimulateArgs),
    /// Run the oracle cross-checks on a model.
    Verify(VerifyArgs),
    /// Write a model or controller in one of the text formats.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Source {
    /// Builtin benchmark: dec-tiger, meeting-grid, box-pushing, correlation-example.
    #[arg(long, conflicts_with = "file")]
    pub domain: Option<String>,
    /// Problem file in the .dpomdp text format.
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Reward magnitude of the correlation example.
    #[arg(long = "R", value_name = "R")]
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Pi,
    PiBounded,
    BoundedOnly,
    Hpi,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, value_enum, default_value = "pi")]
    pub algo: Algo,
    /// Target error of the policy-iteration bound.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Largest number of nodes per local controller after a backup.
    #[arg(long, default_value_t = decpi::solver::DEFAULT_NODE_CAP)]
    pub node_cap: usize,
    /// Wall-clock budget in seconds.
    #[arg(long, default_value_t = decpi::solver::DEFAULT_WALL_CLOCK.as_secs_f64())]
    pub wall_clock: f64,
    /// Dominance slack accepted by controller reductions.
    #[arg(long, default_value_t = 0.0)]
    pub slack: f64,
    /// First action of each initial one-node controller, by label.
    #[arg(long, value_delimiter = ',')]
    pub init: Vec<String>,
    /// Local controller sizes for bounded-only runs (one value applies to all agents).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub sizes: Vec<usize>,
    /// Correlation device size for bounded-only runs.
    #[arg(long, default_value_t = 1)]
    pub device: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Belief points per agent for hpi (default 20 on box-pushing, else 10).
    #[arg(long)]
    pub k: Option<usize>,
    /// Teammate policy for hpi: `default`, `uniform` or comma-separated action probabilities.
    #[arg(long, default_value = "default")]
    pub policy: String,
    /// Output directory (overrides DECPI_OUT_DIR).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write every LP built by the transformations into this directory.
    #[arg(long)]
    pub dump_lp: Option<PathBuf>,
    /// Write zero timings so that repeated runs give identical files.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct ControllerArg {
    /// Controller file; defaults to the one-node initial controller.
    #[arg(long)]
    pub controller: Option<PathBuf>,
    /// First actions of the initial controller, by label.
    #[arg(long, value_delimiter = ',')]
    pub init: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub controller: ControllerArg,
    /// Largest number of joint nodes printed.
    #[arg(long, default_value_t = 200)]
    pub max_rows: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub controller: ControllerArg,
    #[arg(long, default_value_t = 100_000)]
    pub episodes: usize,
    /// Steps per episode (default: truncation error below 0.01).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Start state index instead of b₀.
    #[arg(long)]
    pub state: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random beliefs per tree-oracle check.
    #[arg(long, default_value_t = 20)]
    pub beliefs: usize,
    #[arg(long, default_value_t = 20_000)]
    pub episodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Dpomdp,
    Dot,
    Controller,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub controller: ControllerArg,
    #[arg(long, value_enum, default_value = "dpomdp")]
    pub format: Format,
    /// Output file; standard output if absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}
