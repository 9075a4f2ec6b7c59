mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "ifdet",
    version,
    about = "Uplink in-band interference detection toolkit"
)]
struct Cli {
    /// Seed for all randomness (overrides `seed` in a config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Gen(GenArgs),
    /// Label two gNB traffic logs against each other.
    Label(LabelArgs),
    /// Run a model over a dataset and write per-record predictions.
    Infer(InferArgs),
    /// Measure warm-up and steady-state forward latency.
    Bench(BenchArgs),
    /// Confusion matrix and metrics of a model on a dataset.
    Eval(EvalArgs),
    /// Print the layer shapes of a model configuration.
    Shapes(ShapesArgs),
    /// Write a randomly initialized weight bundle.
    InitWeights(InitWeightsArgs),
    /// Run the slot-clocked pipeline on synthetic slots.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// TOML file with a [sweep] section.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: u64,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// CSV log with columns timestamp_us,cb_total_count.
    #[arg(long)]
    pub log1: PathBuf,
    #[arg(long)]
    pub log2: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub window_ms: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Per-record CSV output.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Skip warm-up so the first call pays for it (and is reported cold).
    #[arg(long)]
    pub no_warmup: bool,
    #[arg(long, default_value_t = ifdet_core::runtime::DEFAULT_LATENCY_BUDGET_US)]
    pub budget_us: f64,
    /// Write <PREFIX>_summary.csv, <PREFIX>_moving_average.csv, <PREFIX>_cdf.csv.
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Write the confusion matrix and metrics as <PREFIX>_confusion.csv and <PREFIX>_metrics.csv.
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShapesArgs {
    #[arg(long)]
    pub alpha: usize,
    #[arg(long)]
    pub beta: usize,
    #[arg(long, default_value_t = 32)]
    pub gamma: u32,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
}

#[derive(Debug, Args)]
pub struct InitWeightsArgs {
    #[arg(long)]
    pub alpha: usize,
    #[arg(long)]
    pub beta: usize,
    #[arg(long, default_value_t = 32)]
    pub gamma: u32,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Take scalar normalization statistics from this dataset.
    #[arg(long)]
    pub stats_from: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// TOML file with optional [sweep] and [pipeline] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub slots: u64,
    #[arg(long)]
    pub slot_period_us: Option<u64>,
    #[arg(long)]
    pub no_warmup: bool,
    /// Log sampled records to this .ifr file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write timing CSVs with this prefix.
    #[arg(long, value_name = "PREFIX")]
    pub report: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen(a) => commands::gen(&a, cli.seed),
        Command::Label(a) => commands::label(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Bench(a) => commands::bench(&a, cli.seed),
        Command::Eval(a) => commands::eval(&a),
        Command::Shapes(a) => commands::shapes(&a),
        Command::InitWeights(a) => commands::init_weights(&a, cli.seed),
        Command::Run(a) => commands::run(&a, cli.seed),
    }
}
