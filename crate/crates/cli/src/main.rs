//! `staggercast`: run simulations, compare runs, validate configuration and
//! launch the proxy.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod error;
mod proxy_cmd;
mod report;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "staggercast", version = env!("STAGGERCAST_VERSION"), about = "Demand-side management for ISP networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario for one seed or an inclusive seed range.
    Simulate {
        /// Scenario file bundling workload, population, ruleset and network.
        #[arg(long)]
        config: PathBuf,
        /// A seed such as `7`, or an inclusive range such as `1..100`.
        #[arg(long, default_value = "1")]
        seed: simulate::Seeds,
        /// Output directory; refused if it already holds a run.
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing run in `--out`.
        #[arg(long)]
        force: bool,
        /// Run the baseline: no rules, no agents, no forced deferral.
        #[arg(long)]
        dsm_off: bool,
        /// Name for the run in reports.
        #[arg(long)]
        label: Option<String>,
    },
    /// Compare runs: peak-to-mean, p95 load and acceptance per resource.
    Report {
        /// Run directories written by `simulate`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Check that configuration files parse and agree with each other.
    Validate {
        /// Scenario file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Proxy configuration file.
        #[arg(long)]
        proxy_config: Option<PathBuf>,
        /// Rule set file.
        #[arg(long)]
        ruleset: Option<PathBuf>,
    },
    /// Run the intercepting proxy until interrupted. SIGHUP reloads both files.
    Proxy {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ruleset: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        upstream_timeout_ms: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, seed, out, force, dsm_off, label } => {
            simulate::run(&simulate::Options { config, seeds: seed, out, force, dsm: !dsm_off, label })
        }
        Command::Report { runs, format } => {
            let rows = report::load(&runs)?;
            print!("{}", report::render(&rows, format));
            Ok(())
        }
        Command::Validate { config, proxy_config, ruleset } => {
            let checked = simulate::validate(config.as_deref(), proxy_config.as_deref(), ruleset.as_deref())?;
            println!("ok: {checked} file(s) valid");
            Ok(())
        }
        Command::Proxy { listen, config, ruleset, upstream_timeout_ms } => {
            proxy_cmd::run(&listen, &config, &ruleset, upstream_timeout_ms)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STAGGERCAST_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
