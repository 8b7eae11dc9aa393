mod args;
mod bench;
mod commands;
mod error;
mod heatmap;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(c) => commands::train(c),
        Command::Calibrate(c) => commands::calibrate(c),
        Command::Score(c) => commands::score(c),
        Command::TrainHeads(c) => commands::train_heads(c),
        Command::Classify(c) => commands::classify(c),
        Command::Visualize(c) => heatmap::visualize(c),
        Command::Synth(c) => commands::synth(c),
        Command::Bench(c) => bench::bench(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
