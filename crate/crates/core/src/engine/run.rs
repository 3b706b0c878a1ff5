use std::time::Instant;

use crate::consensus::{
    consensus_distance, control_gossip, critical_distance, local_estimator, ControlInputs, ControlMode, ControlPolicy,
    EmaTracker, Gossiper, DEFAULT_EMA_BETA,
};
use crate::error::{Error, Result};
use crate::linalg::norm_sq;
use crate::problems::{Problem, ProblemConstants, ProblemSpec};
use crate::states::NodeStates;
use crate::topology::TopologySpec;
use crate::trace::{MetricsTrace, TraceMeta, TraceRecord};

use super::schedule::LrSchedule;
use super::step::{check_divergence, local_step, StepContext};

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub topology: TopologySpec,
    pub schedule: LrSchedule,
    /// One policy per phase.
    pub policies: Vec<ControlPolicy>,
    pub seed: u64,
    pub momentum: f64,
    /// Local updates per communication round.
    pub local_steps: usize,
    pub ema_beta: f64,
    pub config_hash: String,
}

impl RunConfig {
    pub fn new(
        problem: ProblemSpec,
        topology: TopologySpec,
        schedule: LrSchedule,
        policies: Vec<ControlPolicy>,
        seed: u64,
    ) -> Self {
        Self {
            problem,
            topology,
            schedule,
            policies,
            seed,
            momentum: 0.0,
            local_steps: 1,
            ema_beta: DEFAULT_EMA_BETA,
            config_hash: String::new(),
        }
    }

    pub fn iterations(&self) -> usize {
        self.schedule.phases.total()
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        let phases = self.schedule.phases.phases();
        if self.policies.len() != phases {
            return Err(Error::Config(format!("{} policies given for {phases} phases", self.policies.len())));
        }
        for p in &self.policies {
            p.validate()?;
            if let ControlMode::ConstantTarget { xi_max: None, .. } = p.mode {
                return Err(Error::Config("constant target without xi_max; run the uncontrolled pass first".into()));
            }
        }
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.ema_beta) {
            return Err(Error::Config(format!("ema beta must be in [0, 1), got {}", self.ema_beta)));
        }
        Ok(())
    }
}

/// Problem, constants and starting point of a run.
#[derive(Debug)]
pub struct RunSetup {
    pub problem: Problem,
    pub constants: ProblemConstants,
    pub x0: Vec<f64>,
}

impl RunSetup {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let problem = Problem::build(&config.problem, config.topology.n)?;
        let x0 = problem.initial_point(config.seed);
        let constants = problem.constants(&problem.probe_points(&x0, config.seed))?;
        Ok(Self { problem, constants, x0 })
    }
}

/// Runs the full training loop and returns the per-iteration trace.
pub fn run(config: &RunConfig) -> Result<MetricsTrace> {
    config.validate()?;
    let setup = RunSetup::new(config)?;
    run_with(config, &setup)
}

/// As [`run`], reusing a prepared problem.
pub fn run_with(config: &RunConfig, setup: &RunSetup) -> Result<MetricsTrace> {
    config.validate()?;
    let started = Instant::now();
    let n = config.topology.n;
    let problem = &setup.problem;
    let mut states = NodeStates::identical(n, &setup.x0);
    let mut gossiper = Gossiper::new(config.topology, config.seed)?;
    let mut ema = EmaTracker::new(config.ema_beta);
    let mut records = Vec::with_capacity(config.iterations());
    let mut phase = 0;
    for t in 0..config.iterations() {
        let current_phase = config.schedule.phases.phase_at(t);
        if current_phase != phase {
            phase = current_phase;
            ema.reset();
        }
        let lr = config.schedule.lr_at(t);
        let ctx = StepContext { seed: config.seed, iteration: t, momentum: config.momentum };
        let stats = local_step(&mut states, problem, lr, &ctx)?;
        let phi_ema = ema.update(stats.phi_bar);
        let (gossip_steps, control_target) = if (t + 1) % config.local_steps == 0 {
            let policy = &config.policies[phase - 1];
            let inputs = ControlInputs { iteration: t, phi_ema: Some(phi_ema) };
            let outcome = control_gossip(&mut states, &mut gossiper, policy, &inputs)?;
            (outcome.gossip_steps, outcome.target)
        } else {
            (0, None)
        };
        check_divergence(&states, t)?;
        let mean = states.mean();
        let grad_norm_sq = norm_sq(&problem.full_grad(&mean)?);
        records.push(TraceRecord {
            iter: t,
            phase,
            lr,
            loss_mean: problem.loss(&mean)?,
            grad_norm_mean_sq: grad_norm_sq,
            xi_sq: consensus_distance(&states),
            theta_sq: local_estimator(&states, gossiper.current())?.theta_sq,
            phi_bar: stats.phi_bar,
            phi_sq: stats.phi_sq,
            gamma_sq: critical_distance(grad_norm_sq, lr, &setup.constants, n)?,
            gossip_steps,
            seed: config.seed,
            control_target,
            phi_ema,
        });
    }
    Ok(MetricsTrace {
        records,
        meta: TraceMeta {
            config_hash: config.config_hash.clone(),
            seed: config.seed,
            ema_beta: config.ema_beta,
            wall_clock_ms: started.elapsed().as_millis(),
        },
    })
}
