//! `netsense`: run workers, the coordinator, offline analysis and benchmarks.

mod args;
mod bench;
mod commands;
mod sampler;
mod signals;

use clap::{Parser, Subcommand};

use args::{AnalyzeArgs, BenchArgs, CoordinatorArgs, GenArgs, WorkerArgs};

#[derive(Parser, Debug)]
#[command(name = "netsense", version, about = "Streaming traffic-matrix aggregation and analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest a pair stream, build base matrices and ship local aggregates.
    Worker(WorkerArgs),
    /// Receive local aggregates and emit global aggregates.
    Coordinator(CoordinatorArgs),
    /// Print the analytics record of a stored `.dbtm` matrix.
    Analyze(AnalyzeArgs),
    /// Launch a coordinator and workers for each worker count and report throughput.
    Bench(BenchArgs),
    /// Write a synthetic pair file for replay.
    Gen(GenArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Worker(a) => commands::worker(a),
        Command::Coordinator(a) => commands::coordinator(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Bench(a) => bench::run(a),
        Command::Gen(a) => commands::gen(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Exits with clap's usage-error status for a configuration clap cannot check itself.
pub(crate) fn usage_error(msg: impl std::fmt::Display) -> ! {
    use clap::CommandFactory;
    Cli::command()
        .error(clap::error::ErrorKind::ValueValidation, msg)
        .exit()
}
