//! `taxnov`: hierarchical novelty detection from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 failed self-test.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "taxnov", version, about = "Hierarchical novelty detection over precomputed features")]
pub struct Cli {
    /// Seed for every random component; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Taxonomy utilities.
    #[command(subcommand)]
    Tax(TaxCommand),
    /// Train a classifier.
    Train(TrainArgs),
    /// Predict hierarchical labels for a feature file.
    Predict(PredictArgs),
    /// Score predictions against ground truth and sweep the novel bias.
    Eval(EvalArgs),
    /// Generate the synthetic Gaussian benchmark.
    Synth(SynthArgs),
    /// Zero-shot learning with hierarchical embeddings.
    #[command(subcommand)]
    Gzsl(GzslCommand),
    /// Run the built-in checks.
    Selftest,
}

#[derive(Debug, Subcommand)]
pub enum TaxCommand {
    /// Validate a taxonomy, optionally merge indistinguishable nodes, and
    /// write it in binary form with a summary.
    Build(TaxBuildArgs),
}

#[derive(Debug, Args)]
pub struct TaxonomyArgs {
    /// Taxonomy: an edge TSV (`child<TAB>parent[<TAB>U]`) or a `.bin` file
    /// from `tax build`. Rows flagged `U` are left out.
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Node names (`id<TAB>name`), for edge TSV input.
    #[arg(long)]
    pub names: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TaxBuildArgs {
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub names: Option<PathBuf>,
    /// Fold nodes that share a descendant-leaf set.
    #[arg(long)]
    pub merge: bool,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Topdown,
    Relabel,
    Loo,
    Tdloo,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub method: Method,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    /// Training features (HNDF or CSV).
    #[arg(long)]
    pub train: PathBuf,
    /// Validation features; calibrates the top-down thresholds.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Trained top-down model for `tdloo` (trained on the fly if absent).
    #[arg(long)]
    pub td: Option<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Added to the novel-class scores of flatten models.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub bias: f64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Ground truth TSV (`id<TAB>K<TAB>leaf` or `id<TAB>N<TAB>super,...`).
    #[arg(long, alias = "gt")]
    pub truth: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EmbeddingKind {
    Td,
    Path,
}

#[derive(Debug, Subcommand)]
pub enum GzslCommand {
    /// Write a class embedding table as CSV.
    Embed(GzslEmbedArgs),
    /// Fit semantic maps, combine embeddings, and draw the seen-unseen curve.
    Eval(GzslEvalArgs),
}

#[derive(Debug, Args)]
pub struct GzslEmbedArgs {
    /// Edge TSV with unseen classes flagged `U`.
    #[arg(long, alias = "tax")]
    pub edges: PathBuf,
    #[arg(long, value_enum, alias = "type")]
    pub kind: EmbeddingKind,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GzslEvalArgs {
    /// Edge TSV with unseen classes flagged `U`.
    #[arg(long, alias = "tax")]
    pub edges: PathBuf,
    /// Features of seen classes used to fit the semantic maps.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, alias = "features")]
    pub test: PathBuf,
    /// Validation features for the weight search.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Embedding CSV; repeat or comma-separate to combine several.
    #[arg(long = "embedding", alias = "emb", required = true, value_delimiter = ',')]
    pub embeddings: Vec<PathBuf>,
    /// Comma-separated combination weights (searched on `--val` if absent).
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(short, long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match cli.config.as_deref().map(RunConfig::load).transpose() {
        Ok(c) => c.unwrap_or_default().with_seed(cli.seed),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command, &cfg, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
