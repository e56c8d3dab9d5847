mod commands;
mod error;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "vicsynth", version, about = "Learn, certify and simulate variable impedance controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a task model from demonstration CSV files.
    Learn(commands::learn::LearnArgs),
    /// Search for a certified controller solution.
    Design(commands::design::DesignArgs),
    /// Run the closed-loop simulation of a controller.
    Simulate(commands::simulate::SimulateArgs),
    /// Aggregate simulation metrics across run directories.
    Report(commands::report::ReportArgs),
}

impl Command {
    fn output(&self) -> &PathBuf {
        match self {
            Command::Learn(a) => &a.out,
            Command::Design(a) => &a.out,
            Command::Simulate(a) => &a.out,
            Command::Report(a) => &a.out,
        }
    }

    fn run(&self) -> Result<(), CliError> {
        match self {
            Command::Learn(a) => commands::learn::run(a),
            Command::Design(a) => commands::design::run(a),
            Command::Simulate(a) => commands::simulate::run(a),
            Command::Report(a) => commands::report::run(a),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VICSYNTH_LOG", "warn")).init();
    let cli = Cli::parse();
    let out = cli.command.output().clone();
    output::clear_failure(&out);
    match cli.command.run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if let Err(e) = output::mark_failed(&out, &err) {
                eprintln!("error: could not write failure marker: {e}");
            }
            ExitCode::from(err.exit_code())
        }
    }
}
