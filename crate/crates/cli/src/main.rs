mod args;
mod commands;
mod config;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser};

use config::{AppConfig, UsageError};

/// Sharded hybrid retrieval: build indexes, serve shards and an aggregator,
/// run and rerank queries, generate training data and evaluate runs.
///
/// Settings resolve as flags, then SHARDSEARCH_* environment variables, then
/// the config file, then defaults.
#[derive(Debug, Parser)]
#[command(name = "shardsearch", version, arg_required_else_help = true)]
struct Cli {
    /// Config file (.toml or .json)
    #[arg(long, global = true, env = "SHARDSEARCH_CONFIG")]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: commands::Command,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    commands::run(cli.command, cfg, &rt)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e:#}");
            eprintln!("run with --help for usage");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
