//! `mtpipe`: one entry point for the data, training and evaluation workflow.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtpipe_core::synth::SynthError;
use mtpipe_core::trainpipe::{BackendFailure, TrainError};
use serde_json::Value;

/// Version of every `--json` document; bumped on incompatible changes.
pub const JSON_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "mtpipe", version, about = "Low-resource MT data, training and evaluation pipeline")]
struct Cli {
    /// Workspace config file.
    #[arg(long, global = true, default_value = "mtpipe.toml")]
    config: PathBuf,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sentence and token counts of corpora (all configured corpora by default).
    Stats { ids: Vec<String> },
    /// Deduplicate, drop empty pairs and remove overlap with held-out sets; stores `<id>.clean`.
    Clean {
        id: String,
        /// Held-out corpus or mixture ids.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
    },
    /// Build mixtures (all configured by default) and store them with their clean reports.
    Mix { ids: Vec<String> },
    /// Seeded uniform sample; stores `<id>.test`.
    SampleTest {
        id: String,
        #[arg(long)]
        n: usize,
        /// Defaults to the workspace seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Translate the target side of a corpus; stores `<id>.pivot`.
    Pivot(SynthArgs),
    /// Translate a monolingual corpus; stores `<id>.bt`.
    Backtranslate(SynthArgs),
    /// Run training procedures.
    Train(TrainArgs),
    /// Score a hypothesis file against a reference file, one segment per line.
    Score(ScoreArgs),
    /// Partition evaluation strings into rater surveys.
    DaBuild(DaBuildArgs),
    /// Aggregate direct-assessment responses.
    DaReport(DaReportArgs),
    /// BLEU, ChrF and HTER of raw MT against post-edits.
    PeReport(PeReportArgs),
    /// Run the annotation and translation HTTP API.
    Serve {
        /// Serve config file.
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Input corpus id.
    id: String,
    /// Backend id from the workspace config.
    #[arg(long)]
    backend: String,
    /// Batches in flight at once.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrainerKind {
    Toy,
    Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    #[value(name = "swc-fra")]
    SwcFra,
    #[value(name = "fra-swc")]
    FraSwc,
    Both,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// A, B, C, D or `all`.
    #[arg(long, default_value = "all")]
    procedure: String,
    #[arg(long, value_enum, default_value_t = TrainerKind::Toy)]
    backend: TrainerKind,
    #[arg(long, value_enum, default_value_t = DirectionArg::SwcFra)]
    direction: DirectionArg,
    /// Directions trained in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Defaults to the workspace seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Bleu,
    Chrf,
    Ter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TokenizeArg {
    Intl,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SmoothArg {
    None,
    Exp,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    hyp: PathBuf,
    reference: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Bleu)]
    metric: MetricArg,
    /// BLEU tokenization.
    #[arg(long, value_enum, default_value_t = TokenizeArg::Intl)]
    tokenize: TokenizeArg,
    #[arg(long)]
    lowercase: bool,
    /// BLEU smoothing.
    #[arg(long, value_enum, default_value_t = SmoothArg::Exp)]
    smooth: SmoothArg,
    /// TER as the mean of segment scores instead of corpus-level.
    #[arg(long)]
    ter_average: bool,
}

#[derive(Debug, Args)]
struct DaBuildArgs {
    /// Evaluation strings, JSON lines.
    #[arg(long)]
    strings: PathBuf,
    /// Rater ids, one per line.
    #[arg(long)]
    raters: PathBuf,
    #[arg(long)]
    batch_id: String,
    #[arg(long, default_value_t = 4)]
    surveys: usize,
    #[arg(long, default_value_t = 25)]
    per_survey: usize,
    #[arg(long, default_value_t = 2)]
    raters_per_survey: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output batch file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DaReportArgs {
    /// Survey batch written by `da-build`.
    #[arg(long)]
    batch: PathBuf,
    /// Responses file, CSV or JSON lines.
    #[arg(long, conflicts_with = "store", required_unless_present = "store")]
    responses: Option<PathBuf>,
    /// Serve store directory.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    gap_threshold: u8,
    /// Population instead of sample standard deviation.
    #[arg(long)]
    population_sd: bool,
}

#[derive(Debug, Args)]
struct PeReportArgs {
    /// Raw MT, one segment per line.
    #[arg(long, requires_all = ["post_edited", "source"], conflicts_with = "task")]
    mt: Option<PathBuf>,
    #[arg(long)]
    post_edited: Option<PathBuf>,
    #[arg(long)]
    source: Option<PathBuf>,
    /// PE task file; post-edits are read from `--store`.
    #[arg(long, requires = "store", required_unless_present = "mt")]
    task: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
}

/// Failure class, mapped to the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Usage = 1,
    Data = 2,
    Backend = 3,
}

/// Marker for errors detected after argument parsing that are still usage errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn classify(err: &anyhow::Error) -> Failure {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return Failure::Usage;
        }
        if let Some(e) = cause.downcast_ref::<SynthError>() {
            if matches!(e, SynthError::BackendUnreachable { .. } | SynthError::InvalidBackend(_)) {
                return Failure::Backend;
            }
        }
        if let Some(TrainError::BackendCrashed { .. }) = cause.downcast_ref::<TrainError>() {
            return Failure::Backend;
        }
        if cause.downcast_ref::<BackendFailure>().is_some() {
            return Failure::Backend;
        }
    }
    Failure::Data
}

/// Result of one subcommand: the `--json` document and its human rendering.
pub struct Output {
    pub command: &'static str,
    pub result: Value,
    pub human: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(Failure::Usage as u8) } else { ExitCode::SUCCESS };
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

    match commands::dispatch(&cli) {
        Ok(out) => {
            if cli.json {
                let doc = serde_json::json!({
                    "command": out.command,
                    "schema_version": JSON_SCHEMA_VERSION,
                    "result": out.result,
                });
                println!("{doc}");
            } else {
                print!("{}", out.human);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let failure = classify(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(failure as u8)
        }
    }
}
