use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qream_cli::{Command, Failure, Options, Pipeline, RunConfig};
use tracing_subscriber::EnvFilter;

/// Rewrite retrieved evidence into question-oriented background documents,
/// distill training data and evaluate readers.
#[derive(Parser)]
#[command(name = "qream", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "qream.toml")]
    config: PathBuf,
    /// Override a config key, e.g. `--set hyper.n=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Start over when the output directory holds a run with another config.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Stage,
}

#[derive(Subcommand, Clone, Copy)]
enum Stage {
    /// Build the stylistic exemplar bank.
    Seeds,
    /// Produce candidate pools by iterative rewriting.
    Rewrite,
    /// Score every candidate with the reader and the fact verifier.
    Score,
    /// Select golden rewrites and export the training dataset.
    Distill,
    /// Reader accuracy and document quality per document source.
    Eval,
    /// Accuracy on context-conflicting pairs, raw vs rewritten.
    Cc,
    /// Collate reports and per-stage latency.
    Report,
    /// Every stage in order.
    All,
}

impl From<Stage> for Command {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Seeds => Command::Seeds,
            Stage::Rewrite => Command::Rewrite,
            Stage::Score => Command::Score,
            Stage::Distill => Command::Distill,
            Stage::Eval => Command::Eval,
            Stage::Cc => Command::Cc,
            Stage::Report => Command::Report,
            Stage::All => Command::All,
        }
    }
}

async fn run(cli: Cli) -> Result<Option<String>, Failure> {
    let config = RunConfig::load(&cli.config, &cli.overrides)?;
    let mut pipeline = Pipeline::open(
        config,
        Options {
            force: cli.force,
            ..Options::default()
        },
    )?;
    for outcome in pipeline.run(cli.command.into()).await? {
        let state = if outcome.ran { "done" } else { "up to date" };
        eprintln!("{:<8} {state}", outcome.stage);
    }
    Ok(pipeline.last_report.take())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("QREAM_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(report) => {
            if let Some(table) = report {
                print!("{table}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
