//! `halp`: plan, verify and simulate host-assisted layer-wise parallel
//! inference from the command line.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use commands::Outcome;

#[derive(Parser, Debug)]
#[command(name = "halp", version, about)]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Partition a network and list every server's rows and exchanges.
    Plan(commands::plan::PlanArgs),
    /// Check that partitioned inference reproduces the full run exactly.
    Verify(commands::verify::VerifyArgs),
    /// Evaluate schemes over link rates; writes a summary and Gantt events.
    Simulate(commands::simulate::SimulateArgs),
    /// Deadline reliability, closed form and Monte Carlo.
    Reliability(commands::reliability::ReliabilityArgs),
    /// Collect reference comparisons from earlier outputs.
    Report(commands::report::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Plan(a) => commands::plan::run(a),
        Command::Verify(a) => commands::verify::run(a),
        Command::Simulate(a) => commands::simulate::run(a),
        Command::Reliability(a) => commands::reliability::run(a),
        Command::Report(a) => commands::report::run(a),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
