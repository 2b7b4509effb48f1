//! `capex`: run scenarios, compare runs and lint scenario files.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use capex_core::engine::run;
use capex_core::exploration::policy::TOKEN_ENV;
use capex_core::output::{compare_dirs, write_run};
use capex_core::scenario::{load_scenario, PolicyKind};

#[derive(Parser)]
#[command(name = "capex", version, about = "Capability-exploration manufacturing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Builtin,
    Service,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write metrics.csv, events.log and summary.txt.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long, default_value = "waferfab20")]
        scenario: String,
        #[arg(long, value_enum)]
        exploration: Option<Toggle>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        /// Endpoint for the service policy. The bearer token, if any, is
        /// read from the CAPEX_SERVICE_TOKEN environment variable.
        #[arg(long)]
        service_url: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Compare two run directories.
    Compare { a: PathBuf, b: PathBuf },
    /// Check a scenario file and list every problem found.
    Validate { path: String },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, exploration, policy, service_url, seed, out, horizon } => {
            let mut s = load_scenario(&scenario).with_context(|| format!("loading scenario {scenario}"))?;
            if let Some(t) = exploration {
                s.options.exploration = matches!(t, Toggle::On);
            }
            if let Some(p) = policy {
                s.policy.kind = match p {
                    PolicyArg::Builtin => PolicyKind::Builtin,
                    PolicyArg::Service => PolicyKind::Service,
                };
            }
            if service_url.is_some() {
                s.policy.service_url = service_url;
            }
            if s.policy.kind == PolicyKind::Service && s.policy.service_url.is_none() {
                bail!("--policy service needs --service-url (token from {TOKEN_ENV})");
            }
            if let Some(h) = horizon {
                s.options.horizon = h;
            }
            let metrics = run(&s, seed).context("simulation failed")?;
            let info = write_run(&out, &s, &metrics).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{}: exploration {}, {} completed, {} failed of {} -> {}",
                info.scenario,
                if info.exploration { "on" } else { "off" },
                info.completed_parts,
                info.failed_parts,
                info.released,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { a, b } => {
            let report = compare_dirs(&a, &b)?;
            print!("{report}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { path } => match load_scenario(&path) {
            Ok(s) => {
                println!("{path}: ok ({} states, {} agents, {} parts)", s.states.len(), s.agents.len(), s.total_parts());
                Ok(ExitCode::SUCCESS)
            }
            Err(e) => {
                println!("{path}: {e}");
                Ok(ExitCode::FAILURE)
            }
        },
    }
}
