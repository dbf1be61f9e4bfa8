//! `shopsim`: prepare sessions, annotate rationales, score rewards, evaluate
//! predictions and serve the reward over HTTP.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use shopsim::pipeline::HistoryWindow;
use tracing_subscriber::EnvFilter;

use config::Override;

#[derive(Debug, Parser)]
#[command(name = "shopsim", version, about = "Web-shopper behavior simulation toolkit")]
struct Cli {
    /// TOML config file. Precedence: defaults < file < flags < SHOPSIM_* env.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// Log filter (e.g. `info`, `debug`, `shopsim=trace`). Logs are JSON lines on stderr.
    #[arg(long, global = true, value_name = "FILTER")]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn raw sessions into train/test example files.
    Prepare(PrepareArgs),
    /// Fill missing rationales in prepared example files, in place.
    Annotate(AnnotateArgs),
    /// Score model outputs offline, one reward breakdown per line.
    Score(ScoreArgs),
    /// Evaluate a prediction log and write a metrics report.
    Eval(EvalArgs),
    /// Run the reward scoring service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Raw sessions, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Output directory for train.jsonl, test.jsonl and distribution.csv.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Past steps per example: a number or `full`.
    #[arg(long, value_name = "K")]
    history_window: Option<HistoryWindow>,
    /// Fraction of sessions assigned to train.
    #[arg(long, value_name = "R")]
    split_ratio: Option<f64>,
    /// Seed for the session split.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Per-example character budget.
    #[arg(long, value_name = "CHARS")]
    context_budget: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Http,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    /// Directory holding train.jsonl and/or test.jsonl.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Rationale provider.
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    /// Model identifier sent to the provider; part of the cache key.
    #[arg(long)]
    model: Option<String>,
    /// Chat-completion endpoint for the HTTP provider.
    #[arg(long, value_name = "URL")]
    endpoint: Option<String>,
    /// Rationale cache directory (default: <DATA>/.rationale_cache).
    #[arg(long, value_name = "DIR")]
    cache: Option<PathBuf>,
    /// Maximum concurrent provider calls.
    #[arg(long, value_name = "C")]
    concurrency: Option<usize>,
    /// File with the few-shot example placed in the prompt.
    #[arg(long, value_name = "FILE")]
    few_shot: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// JSONL of {session_id, step, response_text, token_distribution?, rationale_span?, ground_truth?}.
    #[arg(long, value_name = "FILE")]
    predictions: PathBuf,
    /// JSONL of prepared examples or {session_id, step, ground_truth}; joined on (session_id, step).
    #[arg(long, value_name = "FILE")]
    ground_truth: Option<PathBuf>,
    /// Output JSONL of reward breakdowns.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ParseModeArg {
    Strict,
    Lenient,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSONL of {session_id, step, raw_output, ground_truth}.
    #[arg(long, value_name = "FILE")]
    predictions: PathBuf,
    /// Report destination.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Report format (default: csv for a .csv destination, markdown otherwise).
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Fail with exit code 1 if exact-match accuracy (0..1) is below this.
    #[arg(long, value_name = "X")]
    min_exact: Option<f64>,
    /// Output parsing mode.
    #[arg(long, value_enum)]
    parse_mode: Option<ParseModeArg>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    /// Maximum items per request.
    #[arg(long, value_name = "N")]
    max_batch: Option<usize>,
    /// Runtime worker threads.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

fn push<T: serde::Serialize>(out: &mut Vec<Override>, path: &str, value: Option<T>) {
    if let Some(v) = value {
        out.push((path.to_string(), serde_json::to_value(v).expect("flag values serialize")));
    }
}

fn flag_overrides(cli: &Cli) -> Vec<Override> {
    let mut o = Vec::new();
    push(&mut o, "log.level", cli.log_level.clone());
    match &cli.command {
        Command::Prepare(a) => {
            push(&mut o, "prepare.history_window", a.history_window);
            push(&mut o, "prepare.split_ratio", a.split_ratio);
            push(&mut o, "prepare.seed", a.seed);
            push(&mut o, "prepare.context_budget_chars", a.context_budget);
        }
        Command::Annotate(a) => {
            let provider = a.provider.map(|p| match p {
                ProviderArg::Mock => json!("mock"),
                ProviderArg::Http => json!("http"),
            });
            push::<Value>(&mut o, "annotate.provider.provider", provider);
            push(&mut o, "annotate.provider.model", a.model.clone());
            push(&mut o, "annotate.provider.endpoint", a.endpoint.clone());
            push(&mut o, "annotate.cache_dir", a.cache.clone());
            push(&mut o, "annotate.concurrency", a.concurrency);
            push(&mut o, "annotate.few_shot_file", a.few_shot.clone());
        }
        Command::Eval(a) => {
            push(&mut o, "eval.min_exact", a.min_exact);
            let mode = a.parse_mode.map(|m| match m {
                ParseModeArg::Strict => json!("strict"),
                ParseModeArg::Lenient => json!("lenient"),
            });
            push::<Value>(&mut o, "eval.parse_mode", mode);
        }
        Command::Serve(a) => {
            push(&mut o, "serve.host", a.host.clone());
            push(&mut o, "serve.port", a.port);
            push(&mut o, "serve.max_batch", a.max_batch);
            push(&mut o, "serve.workers", a.workers);
        }
        Command::Score(_) => {}
    }
    o
}

fn init_logging(level: &str) {
    let filter = EnvFilter::try_new(level).unwrap_or_else(|_| EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env = config::env_overrides(std::env::vars());
    let cfg = match config::load(cli.config.as_deref(), flag_overrides(&cli), env) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if cli.dump_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    init_logging(&cfg.log.level);

    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(&cfg, &a.input, &a.out),
        Command::Annotate(a) => commands::annotate(&cfg, &a.data),
        Command::Score(a) => commands::score(&cfg, &a.predictions, a.ground_truth.as_deref(), &a.out),
        Command::Eval(a) => {
            let format = a.format.map(|f| match f {
                FormatArg::Markdown => shopsim::eval::ReportFormat::Markdown,
                FormatArg::Csv => shopsim::eval::ReportFormat::Csv,
            });
            commands::eval(&cfg, &a.predictions, &a.out, format)
        }
        Command::Serve(_) => commands::serve(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(error = %format!("{e:#}"), "command failed");
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
