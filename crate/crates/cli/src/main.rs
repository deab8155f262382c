//! `dqrnn`: train, evaluate and analyse QRNN character language models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "dqrnn", version, about = "QRNN character language models with DReLU/DELU candidates")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed override; for `train` it replaces `optimizer.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where to write the tab-separated record. For `train` this replaces
    /// `output.log`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_effective_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model as described by --config.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Bits per character of a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Per-layer cell-state statistics of a checkpoint.
    Stats {
        #[command(flatten)]
        eval: EvalArgs,
        /// Half-width of the near-zero interval.
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
    },
    /// QRNN vs. LSTM tokens/sec.
    Bench(BenchArgs),
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Hidden size used when checking the configured architecture.
        #[arg(long, default_value_t = 3)]
        hidden: usize,
    },
    /// Hidden-state norms of an input-free simple RNN.
    DemoExplode(ExplodeArgs),
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Text to evaluate on; defaults to the config's validation (or training) file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `utf8` or `bytes`; defaults to the config's encoding.
    #[arg(long)]
    pub encoding: Option<String>,
    /// Segment length for carried-state inference.
    #[arg(long)]
    pub seq_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value = "drelu")]
    pub activation: String,
    #[arg(long, default_value_t = 2)]
    pub conv_width: usize,
    /// Also time the QRNN against a copy of itself.
    #[arg(long)]
    pub self_check: bool,
}

#[derive(Args, Debug)]
pub struct ExplodeArgs {
    #[arg(long, default_value = "relu")]
    pub activation: String,
    #[arg(long, default_value_t = 1.1)]
    pub rho: f64,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// `orthogonal` or `permutation`.
    #[arg(long, default_value = "orthogonal")]
    pub matrix: String,
    /// Number of seeds, starting at --seed; more than one prints a summary.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
            Failure::Other(_) => 1,
        }
    }
}
