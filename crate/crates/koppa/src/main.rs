use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use koppa::{checkpoint, runner, RunConfig};
use log::error;

#[derive(Parser)]
#[command(
    name = "koppa",
    version,
    about = "Continual-learning runs with orthogonal prompt keys"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a task sequence and write report.json, CSV matrices and checkpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path override, e.g. `train.lr=0.005`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise a checkpoint: progress so far and memory footprint.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KOPPA_LOG", "info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            overrides,
            out,
        } => {
            let cfg = RunConfig::load(&config)?.with_overrides(&overrides)?;
            let out = out.or_else(|| cfg.out.clone());
            let outcome = runner::run(&cfg, out.as_deref())?;
            let r = &outcome.report;
            println!(
                "tasks={} A_N={} F_N={} memory_bytes={}",
                r.tasks.len(),
                fmt_opt(r.average_accuracy),
                fmt_opt(r.average_forgetting),
                r.memory.total_bytes
            );
            Ok(())
        }
        Command::Report { checkpoint } => {
            let ck = checkpoint::load(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            let summary = serde_json::json!({
                "schema": ck.report.schema,
                "mode": ck.config.mode,
                "tasks_trained": ck.trainer.tasks(),
                "basis_columns": ck.trainer.subspace.columns(),
                "prototypes": ck.trainer.buffer.len(),
                "accuracy": ck.report.accuracy,
                "memory": runner::memory_report(&ck.trainer),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}
