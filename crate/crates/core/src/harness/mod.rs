//! Experiment configs, orchestration and CSV outputs.

mod averaging;
mod config;
mod phases;
mod spectral;
mod verify;

use std::path::{Path, PathBuf};

pub use averaging::{
    averaging_curve, averaging_summary_csv, consensus_averaging_experiment, curves_csv, AveragingCurve,
};
pub use config::{
    AveragingConfig, DsgdPhasesConfig, ExperimentConfig, ExperimentKind, ScheduleConfig, SpectralConfig,
    TopologyConfig, VerifyConfig, OUT_DIR_ENV,
};
pub use phases::{dsgd_phase_experiment, mean_std, PhaseExperiment, PhaseRun};
pub use spectral::{spectral_csv, spectral_row, spectral_table, SpectralRow};
pub use verify::verify;

use crate::error::Result;
use crate::trace::format_xi_max;

/// What an experiment wrote and whether its checks passed.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Human-readable result lines.
    pub lines: Vec<String>,
    /// Names of failed checks (verify only).
    pub failures: Vec<String>,
}

impl Outcome {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }
}

/// Runs `config` and writes its outputs under the resolved output directory.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<Outcome> {
    config.validate()?;
    let mut outcome = Outcome { dir: config.output_dir(out), ..Outcome::default() };
    std::fs::create_dir_all(&outcome.dir)?;
    let hash = config.hash();
    match config.experiment {
        ExperimentKind::ConsensusAveraging => {
            let curves = consensus_averaging_experiment(config)?;
            let tol = config.consensus_avg.tolerance;
            outcome.write("curves.csv", &curves_csv(&curves))?;
            outcome.write("summary.csv", &averaging_summary_csv(&curves, tol, &hash))?;
            for c in &curves {
                let steps = c.steps_to(tol).map_or("not reached".to_string(), |s| s.to_string());
                outcome.lines.push(format!("{} n={} seed={}: {steps} steps", c.topology, c.n, c.seed));
            }
        }
        ExperimentKind::DsgdPhases => {
            let exp = dsgd_phase_experiment(config)?;
            for (seed, entries) in &exp.xi_max {
                outcome.write(&format!("xi_max_seed{seed}.txt"), &format_xi_max(entries))?;
            }
            for run in &exp.runs {
                let stem = format!("{}_seed{}", run.label, run.seed);
                run.trace.write(&outcome.dir.join("traces"), &stem)?;
                outcome.files.push(outcome.dir.join("traces").join(format!("{stem}.csv")));
            }
            outcome.write("summary.csv", &exp.summary_csv())?;
            outcome.write("aggregate.csv", &exp.aggregate_csv())?;
            for label in exp.labels() {
                let (m, s) = exp.final_loss_stats(&label);
                outcome.lines.push(format!("{label}: final loss {m:.6e} +- {s:.2e}"));
            }
        }
        ExperimentKind::SpectralTable => {
            let rows = spectral_table(config)?;
            outcome.write("spectral.csv", &spectral_csv(&rows, &hash))?;
            for r in &rows {
                outcome.lines.push(format!(
                    "{} n={}: p={:.6e} [{:.6e}, {:.6e}] degree {}",
                    r.topology, r.n, r.p, r.p_lower, r.p_upper, r.degree
                ));
            }
        }
        ExperimentKind::Verify => {
            let reports = verify(config)?;
            outcome.lines = reports.iter().map(ToString::to_string).collect();
            outcome.failures = reports.iter().filter(|r| !r.pass).map(|r| r.name.clone()).collect();
            let mut text = outcome.lines.join("\n");
            text.push('\n');
            outcome.write("verify.txt", &text)?;
        }
    }
    Ok(outcome)
}
