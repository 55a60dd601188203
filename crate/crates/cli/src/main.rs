mod eval;
mod serve;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pursuit_core::config::{RunConfig, TrainMode};
use pursuit_core::scheduler::{Manifest, RunOutput};

#[derive(Parser)]
#[command(
    name = "pursuit",
    version,
    about = "Drone pursuit-evasion training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train runner and chaser policies.
    Train(train::TrainArgs),
    /// Evaluate a runner against a chaser under one protocol.
    Eval(eval::EvalArgs),
    /// Host a live match over websocket.
    Serve(serve::ServeArgs),
    /// Print a configuration file with every field filled in.
    Config {
        /// Small networks and budgets instead of the full-scale defaults.
        #[arg(long)]
        desk: bool,
    },
}

/// `PE_RUNS_DIR`, then the config's `output_dir`, then `runs`.
pub(crate) fn runs_root(cfg: Option<&RunConfig>) -> PathBuf {
    if let Some(dir) = std::env::var_os("PE_RUNS_DIR").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    cfg.and_then(|c| c.output_dir.as_deref())
        .unwrap_or("runs")
        .into()
}

pub(crate) fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

pub(crate) fn write_manifest(out: &RunOutput, name: &str, cfg: &RunConfig) -> Result<()> {
    let manifest = Manifest {
        config: cfg,
        seed: cfg.seed,
        crate_name: env!("CARGO_PKG_NAME"),
        crate_version: env!("CARGO_PKG_VERSION"),
        command: std::env::args().collect(),
    };
    out.write_json(name, &manifest)
        .with_context(|| format!("writing {}", out.root().join(name).display()))?;
    Ok(())
}

pub(crate) fn default_run_id(kind: &str, seed: u64) -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format!("{kind}-s{seed}-{secs}")
}

pub(crate) fn mode_name(m: TrainMode) -> &'static str {
    match m {
        TrainMode::Ams => "ams",
        TrainMode::Direct => "direct",
        TrainMode::ColdStart => "cold-start",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a).map(|()| 0),
        Command::Serve(a) => serve::run(a).map(|()| 0),
        Command::Config { desk } => {
            let cfg = if desk {
                RunConfig::desk()
            } else {
                RunConfig::default()
            };
            serde_json::to_string_pretty(&cfg)
                .map(|s| {
                    println!("{s}");
                    0
                })
                .map_err(Into::into)
        }
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
