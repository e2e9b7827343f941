//! Command-line front end for `binhash`.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid configuration, 3 data or
//! format error, 4 training divergence.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<binhash::Error> for CliError {
    fn from(e: binhash::Error) -> Self {
        use binhash::Error as E;
        let msg = e.to_string();
        match e {
            E::Param(_) | E::Init(_) | E::Split(_) => CliError::Config(msg),
            E::Divergence { .. } => CliError::Divergence(msg),
            _ => CliError::Data(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "binhash",
    version,
    about = "Learned binary hash codes for image retrieval",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world and its features.
    GenData(GenDataArgs),
    /// Train a hashing head on a generated world.
    Train(TrainArgs),
    /// Binarize features with a trained head.
    Encode(EncodeArgs),
    /// Rank the code database for each query.
    Search(SearchArgs),
    /// Print the mAP of a code file.
    Eval(EvalArgs),
    /// Sweep code lengths and write an `L,map` table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: u64,
    /// Seed; falls back to BINHASH_SEED, then 7.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Minimum co-observed points for a match.
    #[arg(long)]
    pub tau: Option<usize>,
}

#[derive(Debug, Args)]
pub struct WorldFlags {
    #[arg(long)]
    pub num_models: Option<usize>,
    #[arg(long)]
    pub images_per_model: Option<usize>,
    #[arg(long)]
    pub points_per_model: Option<usize>,
    #[arg(long)]
    pub obs_fraction: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub cluster_spread: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Code length L.
    #[arg(long)]
    pub code_len: Option<usize>,
    /// Negative pool size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Negatives per query.
    #[arg(long)]
    pub m: Option<usize>,
    /// Hinge margin, or `auto` for L/2.
    #[arg(long)]
    pub margin: Option<String>,
    /// Quantization weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Outer iterations (negative regenerations).
    #[arg(long)]
    pub outer_iters: Option<usize>,
    /// Alternations per outer iteration.
    #[arg(long)]
    pub inner_iters: Option<usize>,
    /// SGD epochs per W-step.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub queries_per_batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory (world.json, features.feat).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub world: WorldFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (model.hash, train_report.csv, train_summary.json, pairs.jsonl).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Trained head.
    #[arg(long)]
    pub model: PathBuf,
    /// Feature file (FEAT binary, or `.csv` with an `id,f0,...` header).
    #[arg(long)]
    pub features: PathBuf,
    /// Output directory (codes.bcdb).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Code file; rows follow the world's image order.
    #[arg(long)]
    pub codes: PathBuf,
    /// Directory with world.json naming the code rows.
    #[arg(long)]
    pub data: PathBuf,
    /// Query image id; repeatable. Defaults to every validation query.
    #[arg(long = "query")]
    pub queries: Vec<String>,
    /// Keep only the first N entries per query.
    #[arg(long)]
    pub top: Option<usize>,
    /// Output directory (results.csv).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    /// Database images query the rest of the database.
    Test,
    /// Validation queries against the database.
    Validation,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub codes: PathBuf,
    /// Directory with world.json.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Protocol::Test)]
    pub protocol: Protocol,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (report.csv).
    #[arg(long)]
    pub out: PathBuf,
    /// Code lengths to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = binhash::retrieval::SWEEP_CODE_LENGTHS)]
    pub lengths: Vec<usize>,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
}

/// Parses `args` and runs the subcommand. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    eprintln!("error: missing subcommand or argument; see `binhash --help`");
                    1
                }
                _ => {
                    let rendered = e.to_string();
                    eprintln!(
                        "{}",
                        rendered.lines().next().unwrap_or("error: invalid usage")
                    );
                    1
                }
            };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
