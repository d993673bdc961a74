//! `pcn`: generate sequences, solve them on a star or double star, verify
//! clusterings, compare against the exhaustive oracle and reduce Lightning
//! snapshots.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Algorithm;

#[derive(Debug, Parser)]
#[command(name = "pcn", version, about = "Payment channel network design experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CostArgs {
    /// Channel creation cost.
    #[arg(long)]
    pub k: Option<f64>,
    /// Proportional rejection fee.
    #[arg(long)]
    pub f: Option<f64>,
    /// Fixed rejection fee.
    #[arg(long)]
    pub m: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted-partition sequence as JSON Lines.
    Gen(GenArgs),
    /// Solve the LP, run an algorithm and validate by replay.
    Solve(SolveArgs),
    /// Check the clustering conditions; exits 1 when any fails.
    Verify(VerifyArgs),
    /// Compare the star algorithm and LP against the exhaustive optimum.
    Oracle(OracleArgs),
    /// Reduce a snapshot to its user graph, cluster it and tabulate.
    Lightning(LightningArgs),
    /// Batch-solve a config over several seeds into one CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// JSON generator parameters; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Node count for the standard layout of sqrt(p) clusters of size sqrt(p).
    #[arg(long)]
    pub p: Option<usize>,
    /// Explicit cluster sizes, e.g. `4,4,4,4`.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub q1: Option<f64>,
    #[arg(long)]
    pub q2: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use this constant amount instead of uniform integers.
    #[arg(long)]
    pub amount: Option<f64>,
    #[arg(long)]
    pub amount_lo: Option<u32>,
    #[arg(long)]
    pub amount_hi: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the planted partition here.
    #[arg(long)]
    pub partition_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sequence file (JSON Lines).
    #[arg(long)]
    pub seq: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub center: Option<usize>,
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[command(flatten)]
    pub costs: CostArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub seq: PathBuf,
    #[arg(long)]
    pub partition: PathBuf,
    /// Required inside-to-cross volume factor.
    #[arg(long)]
    pub t: f64,
    /// Check every qualifying window.
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the full JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub seq: PathBuf,
    #[arg(long)]
    pub center: Option<usize>,
    #[command(flatten)]
    pub costs: CostArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LightningArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = pcn_core::lightning::DEFAULT_DEGREE_THRESHOLD)]
    pub degree_threshold: usize,
    #[arg(long, default_value_t = pcn_core::lightning::DEFAULT_AMOUNT_MSAT)]
    pub amount_msat: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Solve(a) => commands::solve(a),
        Command::Verify(a) => commands::verify(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Lightning(a) => commands::lightning(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
