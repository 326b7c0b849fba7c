//! `wbc-bench`: data preparation, training sweeps, evaluation, ablations,
//! figures and the desk-scale self check.

mod commands;
mod config;
mod data;
mod desk_check;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wbc_core::datasets::DatasetTag;
use wbc_core::modelzoo::{Tier, VariantId};

use crate::config::{parse_seeds, parse_variants, WEIGHTS_CACHE_ENV};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "wbc-bench", version, about = "White-blood-cell classification benchmark")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan dataset roots and write manifests plus scan reports.
    Prepare(PrepareArgs),
    /// Train one variant for a list of seeds.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one dataset.
    Evaluate(EvaluateArgs),
    /// Train and compare several variants, then write the report.
    Ablate(AblateArgs),
    /// Draw t-SNE, box plot, bar chart or confusion figures.
    Analyze(AnalyzeArgs),
    /// Rebuild report.json / report.csv and figures from a results directory.
    Report(ReportArgs),
    /// Run the synthetic BN-vs-GN experiment and every oracle suite.
    DeskCheck(DeskCheckArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub raabin_root: Option<PathBuf>,
    #[arg(long)]
    pub lisc_root: Option<PathBuf>,
    /// Directory holding (or receiving) the synthetic two-domain dataset.
    #[arg(long)]
    pub synth_cache: Option<PathBuf>,
    #[arg(long, env = WEIGHTS_CACHE_ENV)]
    pub weights_cache: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SeedList(pub Vec<u64>);

#[derive(Debug, Clone)]
pub struct VariantList(pub Vec<VariantId>);

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Experiment config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tier: Option<Tier>,
    /// `0..9` (inclusive), `3`, or `0,2,5`.
    #[arg(long, value_parser = |s: &str| parse_seeds(s).map(SeedList))]
    pub seeds: Option<SeedList>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub decay_epochs: Option<usize>,
    #[arg(long)]
    pub device: Option<String>,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seeds trained concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also save model checkpoints (always on for `train`).
    #[arg(long)]
    pub save_checkpoints: bool,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Experiment config file (only dataset roots and `synth` are used).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "prepared")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = |s: &str| s.parse::<VariantId>().map_err(|e| e.to_string()))]
    pub variant: Option<VariantId>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Comma list such as `a,a',b,b',i,ii,iii`.
    #[arg(long, value_parser = |s: &str| parse_variants(s).map(VariantList))]
    pub variants: Option<VariantList>,
    #[arg(long)]
    pub no_figures: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = |s: &str| s.parse::<DatasetTag>().map_err(|e| e.to_string()))]
    pub dataset: DatasetTag,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Write the evaluation as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Tsne,
    Box,
    Bars,
    Confusion,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub figure: Figure,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Results directory (box, bars, confusion; or t-SNE model selection).
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// With `--in`, the variant whose mean-closest seed is analysed.
    #[arg(long, value_parser = |s: &str| s.parse::<VariantId>().map_err(|e| e.to_string()))]
    pub variant: Option<VariantId>,
    /// Dataset for a checkpoint confusion matrix.
    #[arg(long, value_parser = |s: &str| s.parse::<DatasetTag>().map_err(|e| e.to_string()))]
    pub dataset: Option<DatasetTag>,
    #[arg(long, default_value = "figures")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 39)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub tsne_seed: u64,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Defaults to the input directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_figures: bool,
}

#[derive(Debug, Args)]
pub struct DeskCheckArgs {
    /// Working directory for data, runs and the summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of seeds for the synthetic experiment.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Report(a) => commands::report(a),
        Command::DeskCheck(a) => desk_check::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code != 0 {
                eprintln!("{}", CliError::Usage(e.kind().to_string()).to_json());
            }
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
