//! `relayctl`: runs and administers the proxy, aggregator and gateway
//! from one sectioned config file.

mod admin;
mod config;
mod daemons;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use admin::Format;
use config::RelayConfig;
use daemons::Component;

#[derive(Parser)]
#[command(name = "relayctl", version, about = "Runs and administers the OAI-PMH relay daemons")]
struct Cli {
    /// Deployment config file.
    #[arg(short, long, global = true, default_value = "relay.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Starts one daemon or all of them and runs until interrupted.
    Run {
        #[arg(value_enum)]
        component: Component,
    },
    /// Asks the running aggregator to harvest one repository now.
    HarvestNow {
        repository: String,
        /// Aggregator root URL; defaults to the config's aggregator address.
        #[arg(long)]
        url: Option<String>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Shows every repository the running aggregator knows.
    Status {
        #[arg(long)]
        url: Option<String>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Checks the config file and exits.
    ValidateConfig,
}

const CONFIG_ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    // Admin commands with --url work without a config file.
    let needs_config = !matches!(
        &cli.command,
        Command::HarvestNow { url: Some(_), .. } | Command::Status { url: Some(_), .. }
    );
    let config = if needs_config {
        match RelayConfig::load(&cli.config) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(CONFIG_ERROR);
            }
        }
    } else {
        RelayConfig::default()
    };

    let admin_root = |url: &Option<String>| -> Option<String> {
        match url {
            Some(u) => Some(u.trim_end_matches('/').to_owned()),
            None => config.aggregator.as_ref().map(|a| a.public_url()),
        }
    };
    let runtime = tokio::runtime::Runtime::new().expect("starting tokio runtime");
    let result = match &cli.command {
        Command::ValidateConfig => {
            let names: Vec<&str> = config.listeners().iter().map(|(n, _)| *n).collect();
            println!(
                "{}: ok ({})",
                cli.config.display(),
                if names.is_empty() { "no daemons".to_owned() } else { names.join(", ") }
            );
            Ok(())
        }
        Command::Run { component } => runtime.block_on(daemons::run(*component, config.clone())),
        Command::HarvestNow { repository, url, format } => match admin_root(url) {
            Some(root) => runtime.block_on(admin::harvest_now(&root, repository, *format)),
            None => return no_aggregator(&cli.config),
        },
        Command::Status { url, format } => match admin_root(url) {
            Some(root) => runtime.block_on(admin::status(&root, *format)),
            None => return no_aggregator(&cli.config),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn no_aggregator(path: &std::path::Path) -> ExitCode {
    eprintln!("{}: no [aggregator] section and no --url given", path.display());
    ExitCode::from(CONFIG_ERROR)
}
