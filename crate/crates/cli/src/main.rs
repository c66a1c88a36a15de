use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use spikecount::config::RunConfig;
use spikecount::experiment::{self, EvalRequest, Split};
use spikecount::optim::EvalMode;

/// Train and evaluate rate-coded integrate-and-fire networks.
#[derive(Debug, Parser)]
#[command(name = "spikecount", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train `run.repeats` models from a TOML configuration.
    Train {
        config: PathBuf,
        /// Override `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Override `run.out_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and print accuracy and confusion counts.
    Eval {
        checkpoint: PathBuf,
        /// Presentation window in ms (changes r_max).
        #[arg(long = "T", value_name = "T")]
        duration: Option<f64>,
        #[arg(long)]
        mode: Option<EvalMode>,
        #[arg(long)]
        split: Option<Split>,
        /// Take the data from this configuration instead of the stored one.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Describe a checkpoint.
    Inspect { checkpoint: PathBuf },
}

fn run(cli: Cli) -> spikecount::Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out_dir,
        } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(seed) = seed {
                cfg.run.seed = seed;
            }
            if let Some(dir) = out_dir {
                cfg.run.out_dir = dir;
            }
            let summary = experiment::run_training(&cfg)?;
            let (tm, ts) = summary.test_accuracy();
            let (rm, rs) = summary.train_accuracy();
            println!(
                "repeats={} train_acc={rm:.4}±{rs:.4} test_acc={tm:.4}±{ts:.4} out_dir={}",
                summary.repeats.len(),
                summary.out_dir.display()
            );
        }
        Command::Eval {
            checkpoint,
            duration,
            mode,
            split,
            config,
        } => {
            let report = experiment::run_eval(
                &checkpoint,
                &EvalRequest {
                    duration,
                    mode,
                    split,
                    config,
                },
            )?;
            print!("{}", report.render());
        }
        Command::Inspect { checkpoint } => print!("{}", experiment::inspect(&checkpoint)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
