use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consensus::{ControlMode, ControlPolicy, DEFAULT_EMA_BETA};
use crate::engine::{LrSchedule, PhaseSchedule, RunConfig, ScheduleKind};
use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::topology::{TopologyKind, TopologySpec};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "CCD_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ConsensusAveraging,
    DsgdPhases,
    SpectralTable,
    Verify,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ConsensusAveraging => "consensus-averaging",
            ExperimentKind::DsgdPhases => "dsgd-phases",
            ExperimentKind::SpectralTable => "spectral-table",
            ExperimentKind::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub kind: ScheduleKind,
    pub base_lr: f64,
    /// Peak multiplier; defaults to the number of nodes when warmup is used
    /// and to 1 otherwise.
    #[serde(default)]
    pub scaling: Option<f64>,
    #[serde(default)]
    pub warmup_iters: usize,
    #[serde(default)]
    pub decay_points: Vec<f64>,
}

fn default_factors() -> Vec<f64> {
    vec![1.0, 0.5, 0.25, 0.125]
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsgdPhasesConfig {
    /// 1-based phase placed under control; the others follow `phases`.
    #[serde(default = "default_one")]
    pub controlled_phase: usize,
    #[serde(default = "default_factors")]
    pub factors: Vec<f64>,
    #[serde(default)]
    pub adaptive_scales: Vec<f64>,
    /// `q` values for theta control (fixed topologies only).
    #[serde(default)]
    pub theta_q: Vec<f64>,
}

impl Default for DsgdPhasesConfig {
    fn default() -> Self {
        Self { controlled_phase: 1, factors: default_factors(), adaptive_scales: Vec::new(), theta_q: Vec::new() }
    }
}

fn default_sizes() -> Vec<usize> {
    vec![16, 32, 64]
}

fn default_kinds() -> Vec<TopologyKind> {
    TopologyKind::ALL.to_vec()
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_max_steps() -> usize {
    100_000
}

fn default_trials() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragingConfig {
    #[serde(default = "default_kinds")]
    pub topologies: Vec<TopologyKind>,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    /// Stop once `Xi` falls to this value.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

impl Default for AveragingConfig {
    fn default() -> Self {
        Self {
            topologies: default_kinds(),
            sizes: default_sizes(),
            tolerance: default_tolerance(),
            max_steps: default_max_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    #[serde(default = "default_kinds")]
    pub topologies: Vec<TopologyKind>,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { topologies: default_kinds(), sizes: default_sizes(), trials: default_trials() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Replace one mixing matrix by a copy with a row sum of 1.01, to see
    /// the battery fail.
    #[serde(default)]
    pub corrupt_mixing: bool,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_beta() -> f64 {
    DEFAULT_EMA_BETA
}

/// One experiment, parsed from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Label used for the output directory; defaults to the experiment kind.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub topology: Option<TopologyConfig>,
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub schedule: Option<ScheduleConfig>,
    /// Baseline policy of every phase; defaults to all-reduce everywhere.
    #[serde(default)]
    pub phases: Vec<ControlPolicy>,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_one")]
    pub local_steps: usize,
    #[serde(default = "default_beta")]
    pub ema_beta: f64,
    #[serde(default)]
    pub dsgd_phases: DsgdPhasesConfig,
    #[serde(default)]
    pub consensus_avg: AveragingConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Minimal configuration of the given kind with all defaults.
    pub fn minimal(experiment: ExperimentKind) -> Self {
        toml::from_str(&format!("experiment = \"{}\"", experiment.name())).expect("defaults parse")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.experiment == ExperimentKind::DsgdPhases {
            let (Some(_), Some(_), Some(_)) = (&self.topology, &self.problem, &self.schedule) else {
                return Err(Error::Config("dsgd-phases needs [topology], [problem] and [schedule]".into()));
            };
            if self.iterations == 0 {
                return Err(Error::Config("dsgd-phases needs iterations > 0".into()));
            }
            let phases = self.schedule.as_ref().map_or(1, |s| s.decay_points.len() + 1);
            if !self.phases.is_empty() && self.phases.len() != phases {
                return Err(Error::Config(format!("{} phase policies for {phases} phases", self.phases.len())));
            }
            let k = self.dsgd_phases.controlled_phase;
            if k == 0 || k > phases {
                return Err(Error::Config(format!("controlled_phase {k} outside 1..={phases}")));
            }
            if let Some(f) = self.dsgd_phases.factors.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                return Err(Error::Config(format!("factor {f} outside [0, 1]")));
            }
            validate_structure(&self.run_config(self.seeds[0])?)?;
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.experiment.name().to_string())
    }

    /// Output directory: explicit override, then the config's `output`, then
    /// `$CCD_OUT_DIR/<name>`, then `out/<name>`.
    pub fn output_dir(&self, cli_override: Option<&Path>) -> PathBuf {
        if let Some(p) = cli_override {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output {
            return p.clone();
        }
        let root = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"));
        root.join(self.name())
    }

    /// SHA-256 of the canonical JSON form of the parsed config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn phase_count(&self) -> usize {
        self.schedule.as_ref().map_or(1, |s| s.decay_points.len() + 1)
    }

    /// Baseline per-phase policies.
    pub fn baseline_policies(&self) -> Vec<ControlPolicy> {
        if self.phases.is_empty() {
            vec![ControlPolicy::all_reduce(); self.phase_count()]
        } else {
            self.phases.clone()
        }
    }

    /// Training run for `seed` with the baseline policies.
    pub fn run_config(&self, seed: u64) -> Result<RunConfig> {
        let missing = |what: &str| Error::Config(format!("missing [{what}] section"));
        let topo = self.topology.as_ref().ok_or_else(|| missing("topology"))?;
        let problem = self.problem.clone().ok_or_else(|| missing("problem"))?;
        let s = self.schedule.as_ref().ok_or_else(|| missing("schedule"))?;
        let topology = TopologySpec::new(topo.kind, topo.n, topo.seed)?;
        let scaling = s.scaling.unwrap_or(if s.warmup_iters > 0 { topo.n as f64 } else { 1.0 });
        let phases = PhaseSchedule::new(&s.decay_points, self.iterations)?;
        let schedule = LrSchedule::new(s.kind, s.base_lr, scaling, s.warmup_iters, phases)?;
        let mut run = RunConfig::new(problem, topology, schedule, self.baseline_policies(), seed);
        run.momentum = self.momentum;
        run.local_steps = self.local_steps;
        run.ema_beta = self.ema_beta;
        run.config_hash = self.hash();
        Ok(run)
    }
}

/// Validation that tolerates constant targets still waiting for `xi_max`.
fn validate_structure(run: &RunConfig) -> Result<()> {
    let mut probe = run.clone();
    for p in &mut probe.policies {
        if let ControlMode::ConstantTarget { xi_max: xi @ None, .. } = &mut p.mode {
            *xi = Some(0.0);
        }
    }
    probe.validate()
}
