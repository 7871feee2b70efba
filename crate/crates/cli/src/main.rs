//! Command-line pipeline for evaluating chat models as deductive
//! qualitative coders.
//!
//! Stages: ingest -> sample -> code -> metrics -> validity -> report,
//! each persisting its artifacts and a content-addressed manifest line;
//! `pipeline` chains them all. Exit codes: 0 success, 1 validation
//! error, 2 backend failure.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{Aggregation, BackendChoice, RunConfig};
use dqc_core::coder::CoderError;
use dqc_core::interventions::InterventionKind;
use dqc_core::report::Format;

#[derive(Parser)]
#[command(
    name = "dqc",
    about = "Deductive qualitative coding harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Raw labeled CSV (ingest input).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Label scheme JSON (defaults to the bundled CAP majors).
    #[arg(long)]
    scheme: Option<PathBuf>,
    /// Class definitions JSON (defaults to the bundled placeholder).
    #[arg(long)]
    defs: Option<PathBuf>,
    /// Prompt template overrides (JSON).
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Comma-separated interventions (zero-shot,few-shot,definitions,step-by-step).
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<InterventionKind>>,
    /// Sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Sample count.
    #[arg(long = "N")]
    count: Option<usize>,
    /// Master seed (required; no wall-clock default).
    #[arg(long)]
    seed: Option<u64>,
    /// Salt for the md5 shuffle.
    #[arg(long)]
    salt: Option<String>,
    /// Coder backend.
    #[arg(long)]
    backend: Option<BackendChoice>,
    /// Error rate for the noisy replay backend.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Items per session before a fresh chat is opened.
    #[arg(long)]
    max_items: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV column holding the record id.
    #[arg(long)]
    col_id: Option<String>,
    /// CSV column holding the summary text.
    #[arg(long)]
    col_summary: Option<String>,
    /// CSV column holding the numeric major label.
    #[arg(long)]
    col_major: Option<String>,
    /// CSV column holding the numeric sublabel (empty to disable).
    #[arg(long)]
    col_sub: Option<String>,
    /// Enable sublabel mode (drop rows without a gold sublabel).
    #[arg(long)]
    sub_mode: bool,
    /// Rare-class exclusion threshold.
    #[arg(long)]
    min_count: Option<usize>,
    /// Records reserved for few-shot/warm-up training material.
    #[arg(long)]
    training_pool: Option<usize>,
    /// Search for (n, N) instead of using fixed values.
    #[arg(long)]
    search: bool,
    #[arg(long)]
    size_start: Option<usize>,
    #[arg(long)]
    size_step: Option<usize>,
    #[arg(long)]
    count_max: Option<usize>,
    /// Concurrent coding sessions.
    #[arg(long)]
    concurrency: Option<usize>,
    /// HTTP requests per second (0 = unlimited).
    #[arg(long)]
    rate_limit: Option<f64>,
    /// Method-level aggregation: pool (default) or average.
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// Report formats (csv,json,md).
    #[arg(long, value_delimiter = ',')]
    formats: Option<Vec<Format>>,
    /// Chat endpoint URL for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent on the wire.
    #[arg(long)]
    model: Option<String>,
    /// Sampling temperature for the http backend.
    #[arg(long)]
    temperature: Option<f64>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest and preprocess a labeled CSV into the canonical corpus.
    Ingest(CommonArgs),
    /// Draw the stratified repeated-measures samples.
    Sample(CommonArgs),
    /// Execute the coding plans against the configured backend.
    Code(CommonArgs),
    /// Compute classification and agreement metrics per method.
    Metrics(CommonArgs),
    /// Run the chi-squared validity suites.
    Validity(CommonArgs),
    /// Render tables and plots from persisted statistics.
    Report(CommonArgs),
    /// Run every stage in order.
    Pipeline(CommonArgs),
    /// Generate a synthetic CAP-shaped corpus CSV.
    GenCorpus {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of rows to generate.
        #[arg(long, default_value_t = 200)]
        rows: usize,
        /// Where to write the CSV.
        #[arg(long, default_value = "corpus.csv")]
        out_file: PathBuf,
    },
}

fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! merge {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = &args.$field { $target = v.clone(); })*
        };
    }
    merge! {
        kinds => config.kinds,
        n => config.n,
        count => config.count,
        salt => config.salt,
        backend => config.backend,
        epsilon => config.epsilon,
        max_items => config.max_items,
        out => config.out,
        min_count => config.min_count,
        training_pool => config.training_pool_size,
        size_start => config.size_start,
        size_step => config.size_step,
        count_max => config.count_max,
        concurrency => config.concurrency,
        rate_limit => config.rate_limit_per_sec,
        aggregation => config.aggregation,
        formats => config.formats,
        endpoint => config.http.endpoint,
        model => config.http.model,
        temperature => config.http.temperature,
        api_key_env => config.http.api_key_env,
        col_id => config.columns.id,
        col_summary => config.columns.summary,
        col_major => config.columns.major,
    }
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    if let Some(p) = &args.corpus {
        config.corpus = Some(p.clone());
    }
    if let Some(p) = &args.scheme {
        config.scheme = Some(p.clone());
    }
    if let Some(p) = &args.defs {
        config.defs = Some(p.clone());
    }
    if let Some(p) = &args.templates {
        config.templates = Some(p.clone());
    }
    if let Some(c) = &args.col_sub {
        config.columns.sub = if c.is_empty() { None } else { Some(c.clone()) };
    }
    if args.sub_mode {
        config.sub_mode = true;
    }
    if args.search {
        config.search = true;
    }
    config.validate()?;
    Ok(config)
}

fn record(config: &RunConfig, stage: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
    manifest::record_stage(&config.out, stage, config.seed(), inputs, outputs)
}

fn run_stage(stage: &str, config: &RunConfig) -> Result<()> {
    let inputs: Vec<PathBuf> = match stage {
        "ingest" => config.corpus.iter().cloned().collect(),
        "sample" => vec![config.out.join("corpus.jsonl")],
        "code" => vec![
            config.out.join("corpus.jsonl"),
            config.out.join("sample_set.json"),
            config.out.join("training_pool.json"),
        ],
        _ => Vec::new(),
    };
    let outputs = match stage {
        "ingest" => stages::stage_ingest(config)?,
        "sample" => stages::stage_sample(config)?,
        "code" => stages::stage_code(config)?,
        "metrics" => stages::stage_metrics(config)?,
        "validity" => stages::stage_validity(config)?,
        "report" => stages::stage_report(config)?,
        other => unreachable!("unknown stage {other}"),
    };
    record(config, stage, &inputs, &outputs)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => run_stage("ingest", &resolve_config(&args)?),
        Command::Sample(args) => run_stage("sample", &resolve_config(&args)?),
        Command::Code(args) => run_stage("code", &resolve_config(&args)?),
        Command::Metrics(args) => run_stage("metrics", &resolve_config(&args)?),
        Command::Validity(args) => run_stage("validity", &resolve_config(&args)?),
        Command::Report(args) => run_stage("report", &resolve_config(&args)?),
        Command::Pipeline(args) => {
            let config = resolve_config(&args)?;
            for stage in ["ingest", "sample", "code", "metrics", "validity", "report"] {
                run_stage(stage, &config)?;
            }
            Ok(())
        }
        Command::GenCorpus {
            common,
            rows,
            out_file,
        } => {
            let config = resolve_config(&common)?;
            let outputs = stages::stage_gen_corpus(&config, rows, &out_file)?;
            record(&config, "gen-corpus", &[], &outputs)
        }
    }
}

/// Backend failures (transport, retry exhaustion, server errors) exit 2;
/// everything else is a validation error and exits 1.
fn is_backend_failure(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<CoderError>(),
            Some(
                CoderError::BackendUnavailable(_)
                    | CoderError::RetryExhausted { .. }
                    | CoderError::Http { .. }
                    | CoderError::ScriptExhausted
            )
        )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_backend_failure(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
