use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use scirforge::pipeline::{validate_corpus, Config, Outcome, Runner, Stage};
use scirforge::{Error, Result};

#[derive(Parser)]
#[command(
    name = "scirforge",
    version,
    about = "Build and benchmark a dataset-grounded scientific QA corpus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory holding datasets.jsonl and papers.jsonl.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Run directory for all artifacts.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate input records and segment plain-text papers.
    Ingest(RunArgs),
    /// Judge which linked papers actually use each dataset.
    Match(RunArgs),
    /// Extract and verify dataset aspects from matched papers.
    Parse(RunArgs),
    /// Generate taxonomy-guided QA pairs.
    Generate(RunArgs),
    /// Score belief shifts and keep supported answers.
    Filter(RunArgs),
    /// Build BM25, passage and embedding indexes.
    Index(RunArgs),
    /// Dataset retrieval benchmark.
    #[command(name = "bench-retrieval")]
    BenchRetrieval(RunArgs),
    /// QA benchmark with and without retrieved passages.
    #[command(name = "bench-qa")]
    BenchQa(RunArgs),
    /// Corpus statistics and cognitive-level distribution.
    Stats(RunArgs),
    /// Dataset-level train/val/test split.
    Split(RunArgs),
    /// Run every stage in order.
    All(RunArgs),
    /// Check records and cross-references in a run directory.
    Validate {
        /// Directory to check; defaults to the configured run directory.
        dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn runner(args: &RunArgs) -> Result<Runner> {
    let mut config = Config::load(&args.config)?;
    if let Some(i) = &args.input {
        config.paths.input_dir = Some(i.clone());
    }
    if let Some(o) = &args.output {
        config.paths.run_dir = Some(o.clone());
    }
    Runner::new(config)
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Ran => "ran",
        Outcome::Unchanged => "unchanged",
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (stage, args) = match cli.command {
        Command::Ingest(a) => (Stage::Ingest, a),
        Command::Match(a) => (Stage::Match, a),
        Command::Parse(a) => (Stage::Parse, a),
        Command::Generate(a) => (Stage::Generate, a),
        Command::Filter(a) => (Stage::Filter, a),
        Command::Index(a) => (Stage::Index, a),
        Command::BenchRetrieval(a) => (Stage::BenchRetrieval, a),
        Command::BenchQa(a) => (Stage::BenchQa, a),
        Command::Stats(a) => (Stage::Stats, a),
        Command::Split(a) => (Stage::Split, a),
        Command::All(a) => {
            let r = runner(&a)?;
            for (stage, o) in r.run_all()? {
                println!("{}", json!({"stage": stage.name(), "outcome": outcome_name(o)}));
            }
            return Ok(true);
        }
        Command::Validate { dir, config, output } => {
            let dir = match (dir, output, config) {
                (Some(d), _, _) | (None, Some(d), _) => d,
                (None, None, Some(c)) => Config::load(&c)?
                    .paths
                    .run_dir
                    .ok_or_else(|| Error::Config("config has no paths.run_dir".into()))?,
                (None, None, None) => {
                    return Err(Error::InvalidArgument("give a directory, --output or --config".into()))
                }
            };
            let report = validate_corpus(&dir)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            return Ok(report.is_clean());
        }
    };
    let r = runner(&args)?;
    let o = r.run(stage)?;
    println!("{}", json!({"stage": stage.name(), "outcome": outcome_name(o)}));
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            ExitCode::from(2)
        }
    }
}
