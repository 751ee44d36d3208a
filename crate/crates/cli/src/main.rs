mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "deepseed", version, about = "Deep-seeded fuzzy clustering of wearable physiological signals")]
struct Cli {
    /// TOML configuration file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic multi-subject dataset in the E4 CSV layout.
    Synth(Overrides),
    /// Ingest, filter, resample and window every subject into caches.
    Preprocess(Overrides),
    /// Train one model per subject on its (downsampled) windows.
    Train(Overrides),
    /// Within-subject k-fold cross-validation.
    Evaluate(Overrides),
    /// Window-length and embedding-size sensitivity sweep.
    Sweep(Overrides),
    /// Re-emit CSV tables from the JSON reports of a run directory.
    Report {
        /// Run directory produced by `evaluate` or `sweep`.
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match &cli.command {
        Command::Report { run } => commands::report(run),
        Command::Synth(o) => commands::with_config(cli.config.as_deref(), o, "synth", commands::synth),
        Command::Preprocess(o) => commands::with_config(cli.config.as_deref(), o, "preprocess", commands::preprocess),
        Command::Train(o) => commands::with_config(cli.config.as_deref(), o, "train", commands::train),
        Command::Evaluate(o) => commands::with_config(cli.config.as_deref(), o, "evaluate", commands::evaluate),
        Command::Sweep(o) => commands::with_config(cli.config.as_deref(), o, "sweep", commands::sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
