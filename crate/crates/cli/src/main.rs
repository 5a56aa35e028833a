//! `drgkit`: catalog building, harmonization, cohort preprocessing,
//! training, prediction and evaluation from the command line.
//!
//! Exit status is 0 on success, 1 when inputs fail validation and 2 when a
//! file cannot be read or written.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "drgkit", version, about = "DRG prediction pipeline")]
struct Cli {
    /// Seed for splitting, training, bootstrap and generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML pipeline configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suppress progress summaries on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a DRG table and write the dissected catalog with its summary.
    BuildCatalog(BuildCatalogArgs),
    /// Generate a synthetic note corpus for desk-scale runs.
    Synth(SynthArgs),
    /// Map historical DRG descriptions onto the catalog.
    Harmonize(HarmonizeArgs),
    /// Merge review decisions into the mapping table.
    ApplyReviews(ApplyReviewsArgs),
    /// Extract courses, apply filters and split the cohort.
    Preprocess(PreprocessArgs),
    /// Train a model on the cohort's training split.
    Train(TrainArgs),
    /// Rank DRG codes for cohort stays.
    Predict(PredictArgs),
    /// Score predictions against the cohort's test split.
    Evaluate(EvaluateArgs),
    /// Render an evaluation report as Markdown tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct BuildCatalogArgs {
    /// `code,description` CSV; the bundled catalog when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "v34")]
    version_tag: String,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Notes JSON lines.
    #[arg(long)]
    out: PathBuf,
    /// Catalog to draw codes from; the desk catalog when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Also write the desk catalog CSV here.
    #[arg(long)]
    write_catalog: Option<PathBuf>,
    #[arg(long, default_value_t = 6000)]
    n_notes: usize,
}

#[derive(Debug, Args)]
struct HarmonizeArgs {
    /// Notes JSON lines carrying `drg_description`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Extra `from,to` normalization rules appended to the defaults.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    accept_threshold: Option<f64>,
    #[arg(long)]
    review_threshold: Option<f64>,
    #[arg(long)]
    out_queue: Option<PathBuf>,
    #[arg(long)]
    out_mapping: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ApplyReviewsArgs {
    #[arg(long)]
    queue: Option<PathBuf>,
    /// `historical_description,decision` CSV; decision is a code or EXCLUDE.
    #[arg(long)]
    decisions: PathBuf,
    /// Mapping with the auto-accepted matches.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop counts per reason (JSON).
    #[arg(long)]
    drops: Option<PathBuf>,
    /// Train/test cohort statistics (JSON).
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    min_class_count: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    TwoLabel,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Reference,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch loss log (JSON).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda_cc: Option<f64>,
    #[arg(long)]
    min_df: Option<usize>,
    #[arg(long)]
    adapter_rank: Option<usize>,
    #[arg(long)]
    adapter_alpha: Option<f64>,
    #[arg(long)]
    adapter_dropout: Option<f64>,
    /// Train the head directly even if the preset or config adds an adapter.
    #[arg(long)]
    no_adapter: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    Test,
    Train,
    All,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    artifact: Option<PathBuf>,
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Predictions JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
    /// Fail unless the artifact was trained in this mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Frequency subsets, e.g. `300,50,30`.
    #[arg(long, value_delimiter = ',')]
    subsets: Option<Vec<usize>>,
    /// Bootstrap iterations; 0 disables.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Per-DRG table (CSV).
    #[arg(long)]
    per_drg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    report: Option<PathBuf>,
    /// Markdown output.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    // clap's own error status (2) would collide with the I/O status
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let ctx = commands::Context {
        seed: cli.seed.or(config.seed).unwrap_or(0),
        quiet: cli.quiet,
        config,
    };
    match cli.command {
        Command::BuildCatalog(a) => commands::build_catalog(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Harmonize(a) => commands::harmonize(&ctx, a),
        Command::ApplyReviews(a) => commands::apply_reviews(&ctx, a),
        Command::Preprocess(a) => commands::preprocess(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
    }
}
