//! `stemkit`: synthesize soundtrack mixtures, train and run the separation
//! model, and score separations.

mod commands;
mod config;
mod dataset;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::commands::{evaluate, fixtures, mix, separate, stats, train};
use crate::error::{CliError, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "stemkit", version, about = "Speech, music and effects separation toolkit")]
struct Cli {
    /// Print errors on standard error as one JSON object per line.
    #[arg(long, global = true)]
    json_errors: bool,
    /// Worker threads for numeric work; 1 gives single-threaded runs [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log filter: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic clip pools and a pools.json index.
    Fixtures(fixtures::FixturesArgs),
    /// Render mixtures, stems and manifests from clip pools.
    Mix(mix::MixArgs),
    /// Train a separation model on a rendered corpus.
    Train(train::TrainArgs),
    /// Separate a mixture file into music, speech and effects stems.
    Separate(separate::SeparateArgs),
    /// Score estimated stems against references.
    Evaluate(evaluate::EvaluateArgs),
    /// Overlap and loudness statistics of a rendered corpus.
    Stats(stats::StatsArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("threads", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Fixtures(a) => fixtures::run(a),
        Command::Mix(a) => mix::run(a),
        Command::Train(a) => train::run(a),
        Command::Separate(a) => separate::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Stats(a) => stats::run(a),
    }
}

fn report(err: &CliError, json: bool) {
    if json {
        eprintln!("{}", err.to_json_line());
    } else {
        eprintln!("error: {err}");
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            if std::env::args().any(|a| a == "--json-errors") {
                let message = e.to_string();
                let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
                let err = CliError {
                    code: EXIT_USAGE,
                    kind: "usage",
                    field: None,
                    message: first.to_string(),
                };
                report(&err, true);
            } else {
                let _ = e.print();
            }
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    let json = cli.json_errors;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e, json);
            ExitCode::from(e.code as u8)
        }
    }
}
