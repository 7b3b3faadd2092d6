use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oairelay_harness::Scenario;

#[derive(Parser)]
#[command(name = "harness", about = "Runs relay scenarios against simulated providers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs a scenario file and prints a JSON report.
    Run { scenario: PathBuf },
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "error".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let Command::Run { scenario } = Cli::parse().command;
    let report = match Scenario::load(&scenario) {
        Ok(s) => s.run().await,
        Err(e) => Err(e),
    };
    match report {
        Ok(report) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("scenario error: {e:#}");
            ExitCode::from(2)
        }
    }
}
