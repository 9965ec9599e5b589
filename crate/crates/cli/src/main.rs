use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use josrc_cli::experiment::thread_limit_from_env;
use josrc_cli::{evaluate_checkpoint, generate_data, parse_config_file, run_experiment};

#[derive(Parser)]
#[command(version, about = "Train and compare noisy-label classifiers on synthetic or CSV data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every arm of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the config's generated train/test sets as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Test accuracy of a checkpoint on a dataset CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    match try_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn try_main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config, seed, out } => {
            let mut spec = parse_config_file(&config)?;
            if let Some(seed) = seed {
                spec.train.seed = seed;
            }
            if let Some(out) = out {
                spec.out_dir = out;
            }
            let report = run_experiment(&spec, thread_limit_from_env()?)?;
            for r in &report.runs {
                match &r.outcome {
                    Ok((mean, std)) => {
                        println!(
                            "{:<20} seed {:<4} final acc {:.2} ± {:.2}",
                            r.arm.name(),
                            r.seed,
                            100.0 * mean,
                            100.0 * std
                        )
                    }
                    Err(e) => println!("{:<20} seed {:<4} FAILED: {e}", r.arm.name(), r.seed),
                }
            }
            println!("summary: {}", report.out_dir.join("summary.csv").display());
            Ok(if report.all_completed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::GenData { config } => {
            let spec = parse_config_file(&config)?;
            for path in generate_data(&spec)? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { checkpoint, data } => {
            let result = evaluate_checkpoint(&checkpoint, &data).context("evaluation failed")?;
            println!("accuracy {:.4} on {} samples", result.accuracy, result.samples);
            Ok(ExitCode::SUCCESS)
        }
    }
}
