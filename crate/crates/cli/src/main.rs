mod config;
mod debug;
mod offline;
mod online;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;
use tracing_subscriber::EnvFilter;

/// Bad flags, config or input files. Exits with status 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Parser, Debug)]
#[command(name = "webground", version, about = "Grounded web agent: offline evaluation, supervised online runs and debugging tools")]
struct Cli {
    /// More logging (-v info, -vv debug); RUST_LOG overrides
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score the agent against cached task dumps
    EvalOffline(offline::EvalArgs),
    /// Drive a browser through tasks behind the approval gate
    RunOnline(online::RunArgs),
    /// Draw set-of-mark labels onto a screenshot
    Annotate(debug::AnnotateArgs),
    /// Print the top-k candidates of an HTML page
    Rank(debug::RankArgs),
    /// Re-aggregate a saved report
    Report(offline::ReportArgs),
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::EvalOffline(a) => offline::eval(a).await,
        Command::RunOnline(a) => online::run(a).await,
        Command::Annotate(a) => debug::annotate(a),
        Command::Rank(a) => debug::rank(a),
        Command::Report(a) => offline::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
