mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ClientKind;

#[derive(Parser, Debug)]
#[command(name = "cotsql", version, about = "Bootstrap, validate and export chain-of-thought rationales for text-to-SQL corpora")]
struct Cli {
    /// Pipeline configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true, default_value = "cotsql.toml")]
    config: PathBuf,
    /// Worker threads for every stage.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides `paths.output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Drop gold queries that fail, time out or return nothing.
    Clean,
    /// Grow the rationale repository with the teacher until coverage plateaus.
    Bootstrap(BootstrapArgs),
    /// Rationalize uncovered instances with their gold SQL and flag disagreements.
    Rationalize(RationalizeArgs),
    /// Write the rationalization training set built from the repository.
    Trainset,
    /// Apply review decisions to flagged instances.
    Triage {
        /// JSONL of {flag_id, disposition, corrected_gold_sql?}.
        #[arg(long)]
        decisions: PathBuf,
    },
    /// Write fine-tuning sets.
    Export {
        /// gold, cot_short or cot_long. All variants when omitted.
        #[arg(long)]
        variant: Option<String>,
        /// covered_only or full. Both when omitted.
        #[arg(long)]
        scope: Option<String>,
    },
    /// Score predictions against the dev set.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        /// Overrides `paths.dev`.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Report name, used for the output file.
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Print coverage and accuracy tables.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Remove duplicate records from the repository file.
    Compact,
    /// Print the fallback schema text of a database.
    RenderSchema { db_id: String },
    /// Write a self-contained example project.
    #[command(subcommand)]
    Demo(DemoCommand),
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    #[arg(long, value_enum)]
    teacher: Option<ClientKind>,
    #[arg(long)]
    max_iterations: Option<u32>,
    /// Overrides `paths.seeds_dir`.
    #[arg(long)]
    seeds_dir: Option<PathBuf>,
    /// Overrides `paths.corpus` as the bootstrap input (default: cleaned corpus).
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RationalizeArgs {
    #[arg(long, value_enum)]
    model: Option<ClientKind>,
    #[arg(long)]
    attempts: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum ReportCommand {
    /// Coverage per stage.
    Coverage,
    /// Accuracy difference `b - a` between two eval reports.
    Diff { a: PathBuf, b: PathBuf },
    /// Accuracy table over `name=report.json` pairs.
    Table {
        #[arg(required = true)]
        reports: Vec<String>,
    },
}

#[derive(Subcommand, Debug)]
enum DemoCommand {
    /// Write databases, corpus, seeds, dev set, predictions and a config.
    Init { dir: PathBuf },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("COTSQL_LOG").unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({
                "error": commands::error_kind(&e),
                "message": format!("{e:#}"),
            });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
