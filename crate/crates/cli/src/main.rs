use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod report;

use commands::Layout;
use config::RunConfig;

/// Joint treatment-outcome engagement forecasting on synthetic data.
#[derive(Debug, Parser)]
#[command(name = "exocausal", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; omitted fields use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration's.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory shared by all stages.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a signal, a post dataset and the true effects.
    GenData,
    /// Train the configured model variant on the generated data.
    Train,
    /// Forecast accuracy on the test split.
    Evaluate,
    /// Estimate the counterfactual scenario grid.
    Counterfactual,
    /// Score sources by the engagement the signal adds to their posts.
    Influence,
    /// Summarize every available stage in report.md.
    Report,
    /// Every stage in order.
    Run,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .resolve(cli.seed)?;
    let out = Layout::new(cli.out);
    match cli.command {
        Command::GenData => commands::gen_data(&cfg, &out),
        Command::Train => commands::train_model(&cfg, &out),
        Command::Evaluate => commands::evaluate_model(&cfg, &out),
        Command::Counterfactual => commands::counterfactual(&cfg, &out),
        Command::Influence => commands::influence(&cfg, &out),
        Command::Report => commands::write_report(&cfg, &out),
        Command::Run => commands::run_all(&cfg, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One JSON object per failure so scripts can parse stderr.
            let line = serde_json::json!({
                "error": error::kind_of(&e),
                "message": format!("{e:#}").replace('\n', " "),
            });
            eprintln!("{line}");
            ExitCode::from(if matches!(error::kind_of(&e), "schema" | "config") { 2 } else { 1 })
        }
    }
}
