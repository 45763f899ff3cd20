//! `hilp`: benchmark generation, training, rule extraction and evaluation.

mod commands;
mod manifest;
mod rules_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "hilp",
    version,
    about = "Learn first-order rules from a relational knowledge base"
)]
struct Cli {
    /// Worker threads for query scoring; defaults to the available
    /// parallelism. `1` forces single-worker, bit-reproducible runs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the Even-and-Successor benchmark on the integers 0..n.
    GenEs(GenEsArgs),
    /// Write a knowledge base with a planted two-hop composition.
    GenPlanted(GenPlantedArgs),
    /// Train the rule generator and write a checkpoint.
    Train(TrainArgs),
    /// Harden a checkpoint into explicit rules.
    Extract(ExtractArgs),
    /// Evaluate hard rules on a split.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the full model.
    CheckGrad(CheckGradArgs),
}

#[derive(Args)]
pub struct GenEsArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of Even facts held out for testing.
    #[arg(long, default_value_t = 0.2)]
    pub holdout_frac: f64,
}

#[derive(Args)]
pub struct GenPlantedArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub entities: usize,
    /// Extra random target edges, as a fraction of the planted ones.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (`meta.tsv`, `train.tsv`, optional `valid.tsv`, `test.tsv`).
    #[arg(long)]
    pub kb: PathBuf,
    /// Comma-separated target predicates; all base predicates by default.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Configuration file of `key = value` lines.
    #[arg(long, env = "HILP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Log every this many epochs (0 logs only the summary).
    #[arg(long, default_value_t = 25)]
    pub log_every: usize,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Rule file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Write rules in variable form instead of operator form.
    #[arg(long, conflicts_with = "ast")]
    pub variable_form: bool,
    /// Write rules as s-expressions.
    #[arg(long)]
    pub ast: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "rules"])))]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Rule file written by `extract`.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub kb: PathBuf,
    /// `train`, `valid` or `test`.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Score above which a query counts as predicted true.
    #[arg(long, default_value_t = hilp_core::extractor::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Seed for sampled negatives of binary heads.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the metrics block to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CheckGradArgs {
    #[arg(long, env = "HILP_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Coordinates sampled per parameter tensor.
    #[arg(long, default_value_t = 8)]
    pub per_tensor: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        eprintln!("error: cannot start {workers} workers: {e}");
        return ExitCode::FAILURE;
    }
    let ctx = commands::Ctx::new(workers);
    let result = match cli.command {
        Command::GenEs(a) => commands::gen_es(&ctx, &a),
        Command::GenPlanted(a) => commands::gen_planted(&ctx, &a),
        Command::Train(a) => commands::train(&ctx, &a),
        Command::Extract(a) => commands::extract(&ctx, &a),
        Command::Eval(a) => commands::eval(&ctx, &a),
        Command::CheckGrad(a) => commands::check_grad(&ctx, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
