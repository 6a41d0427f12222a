//! `confrec`: train, evaluate and calibrate graph recommenders from the
//! command line.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 numerical failure.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Flags, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "confrec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split, train and write `checkpoint.bin` plus `train_log.jsonl` into --out
    Train,
    /// Precision@N / Accuracy@N on the test split, raw and with --calibrate
    Evaluate,
    /// Write raw and calibrated reliability CSVs into --out and print both ECEs
    Reliability,
    /// Pick the temperature with the lowest validation ECE
    TuneTau,
    /// Write train.txt, valid.txt and test.txt into --out
    SplitExport,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<confrec::Error>())
        .any(confrec::Error::is_numerical);
    if numerical {
        2
    } else {
        1
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.flags)?;
    if let Some(threads) = cfg.threads {
        if !confrec::par::set_threads(threads) {
            log::warn!("thread pool already initialised; --threads ignored");
        }
    }
    match cli.command {
        Command::Train => commands::cmd_train(&cfg),
        Command::Evaluate => commands::cmd_evaluate(&cfg),
        Command::Reliability => commands::cmd_reliability(&cfg),
        Command::TuneTau => commands::cmd_tune_tau(&cfg),
        Command::SplitExport => commands::cmd_split_export(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
