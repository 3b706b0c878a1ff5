use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use consensus_sgd::harness::{run_experiment, ExperimentConfig, ExperimentKind};
use consensus_sgd::Error;

/// Decentralized SGD simulator with consensus-distance control.
#[derive(Debug, Parser)]
#[command(name = "ccd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pure gossip averaging curves for each topology and size.
    ConsensusAvg(Common),
    /// Phase-wise D-SGD training under consensus control.
    DsgdPhases(Common),
    /// Mixing parameter and degree of each topology.
    SpectralTable(Common),
    /// Invariant and oracle battery.
    Verify(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML). Optional except for dsgd-phases.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config and the CCD_OUT_DIR default.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed to run; repeat for several. Replaces the config's seeds.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
}

fn load(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if kind == ExperimentKind::DsgdPhases => {
            return Err(Error::Config("dsgd-phases needs --config".into()));
        }
        None => ExperimentConfig::minimal(kind),
    };
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "config describes a {} experiment, not {}",
            cfg.experiment.name(),
            kind.name()
        )));
    }
    if !common.seeds.is_empty() {
        cfg.seeds = common.seeds.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::ConsensusAvg(c) => (ExperimentKind::ConsensusAveraging, c),
        Command::DsgdPhases(c) => (ExperimentKind::DsgdPhases, c),
        Command::SpectralTable(c) => (ExperimentKind::SpectralTable, c),
        Command::Verify(c) => (ExperimentKind::Verify, c),
    };
    let result = load(kind, common).and_then(|cfg| run_experiment(&cfg, common.out.as_deref()));
    match result {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            println!("wrote {} files to {}", outcome.files.len(), outcome.dir.display());
            if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} checks failed: {}", outcome.failures.len(), outcome.failures.join(", "));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
