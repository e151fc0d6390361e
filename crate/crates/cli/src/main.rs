//! `vqbe`: generate datasets, run and synthesize queries, run experiment
//! sweeps and serve labeling sessions.
//!
//! Payloads go to stdout and diagnostics to stderr. Exit status is 0 on
//! success, 1 on user error and 2 on internal error.

mod commands;
mod prompt;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vqbe", version, about = "Video event queries by example")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Print the vids of segments matching a query, one per line.
    Execute(ExecuteArgs),
    /// Print the SQL form of a query.
    EmitSql {
        query: String,
    },
    /// Synthesize queries from labels; prints the result as JSON.
    Synthesize(SynthesizeArgs),
    /// Run an experiment file and print its report as JSON.
    Bench(BenchArgs),
    /// Serve labeling sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Dataset file (jsonl) or directory (csv-dir).
    #[arg(long, value_name = "PATH")]
    dataset: Option<PathBuf>,
    /// `jsonl` or `csv-dir`; inferred from the path when omitted.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 100)]
    segments: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Two objects per segment, the benchmark layout.
    #[arg(long)]
    pairs: bool,
    #[arg(long)]
    frames: Option<u32>,
    /// Output path; jsonl goes to stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, default_value = "jsonl")]
    format: String,
}

#[derive(Debug, Args)]
struct ExecuteArgs {
    query: String,
    dataset: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleKind {
    GroundTruth,
    Noisy,
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Space {
    Trajectory,
    SceneGraph,
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Segments to generate when no dataset is given.
    #[arg(long, default_value_t = 500)]
    segments: usize,
    /// Target query or benchmark name; labels the segments for the
    /// ground-truth and noisy oracles.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, value_enum, default_value = "ground-truth")]
    oracle: OracleKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Hyperparameter overrides (JSON).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Initial labels, a JSON array of `{"vid", "label"}`.
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    initial_pos: usize,
    #[arg(long, default_value_t = 10)]
    initial_neg: usize,
    /// False-negative rate of the noisy oracle.
    #[arg(long, default_value_t = 0.1)]
    fn_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    fp_rate: f64,
    #[arg(long, value_enum)]
    search: Option<Space>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    experiment: PathBuf,
    /// Also write report.json, CSV tables and plots here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the experiment's worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// `name=path`, repeatable.
    #[arg(long = "dataset", value_name = "NAME=PATH", required = true)]
    datasets: Vec<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Append-only event log, replayed on startup.
    #[arg(long, value_name = "FILE")]
    event_log: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
