use std::fmt::Write as _;

use super::ExperimentConfig;
use crate::consensus::{ControlMode, ControlPolicy};
use crate::engine::{run_with, RunConfig, RunSetup};
use crate::error::Result;
use crate::trace::MetricsTrace;

/// One training run of a phase experiment.
#[derive(Debug, Clone)]
pub struct PhaseRun {
    pub label: String,
    pub seed: u64,
    pub policies: Vec<ControlPolicy>,
    pub trace: MetricsTrace,
}

impl PhaseRun {
    pub fn final_loss(&self) -> f64 {
        self.trace.final_record().map_or(f64::NAN, |r| r.loss_mean)
    }

    pub fn final_grad_norm_sq(&self) -> f64 {
        self.trace.final_record().map_or(f64::NAN, |r| r.grad_norm_mean_sq)
    }

    /// Mean and max gossip steps per iteration within `phase`.
    pub fn gossip_in_phase(&self, phase: usize) -> (f64, usize) {
        let steps: Vec<usize> =
            self.trace.records.iter().filter(|r| r.phase == phase).map(|r| r.gossip_steps).collect();
        let mean = steps.iter().sum::<usize>() as f64 / steps.len().max(1) as f64;
        (mean, steps.iter().copied().max().unwrap_or(0))
    }
}

#[derive(Debug, Clone)]
pub struct PhaseExperiment {
    pub controlled_phase: usize,
    pub config_hash: String,
    /// Per seed: `max Xi` of every phase in the uncontrolled pass.
    pub xi_max: Vec<(u64, Vec<(usize, f64)>)>,
    pub runs: Vec<PhaseRun>,
}

impl PhaseExperiment {
    pub fn runs_labelled<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a PhaseRun> + 'a {
        self.runs.iter().filter(move |r| r.label == label)
    }

    /// Mean and sample standard deviation of the final loss across seeds.
    pub fn final_loss_stats(&self, label: &str) -> (f64, f64) {
        mean_std(&self.runs_labelled(label).map(PhaseRun::final_loss).collect::<Vec<_>>())
    }

    /// Labels in the order they were run.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.label) {
                out.push(r.label.clone());
            }
        }
        out
    }

    /// `label,controlled_phase,seed,final_loss,final_grad_norm_sq,mean_gossip,max_gossip,config_hash`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "label,controlled_phase,seed,final_loss,final_grad_norm_sq,mean_gossip,max_gossip,config_hash\n",
        );
        for r in &self.runs {
            let (mean, max) = r.gossip_in_phase(self.controlled_phase);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{mean},{max},{}",
                r.label,
                self.controlled_phase,
                r.seed,
                r.final_loss(),
                r.final_grad_norm_sq(),
                self.config_hash
            );
        }
        out
    }

    /// `label,seeds,loss_mean,loss_std,grad_norm_sq_mean,grad_norm_sq_std,mean_gossip,config_hash`.
    pub fn aggregate_csv(&self) -> String {
        let mut out =
            String::from("label,seeds,loss_mean,loss_std,grad_norm_sq_mean,grad_norm_sq_std,mean_gossip,config_hash\n");
        for label in self.labels() {
            let runs: Vec<&PhaseRun> = self.runs_labelled(&label).collect();
            let (lm, ls) = mean_std(&runs.iter().map(|r| r.final_loss()).collect::<Vec<_>>());
            let (gm, gs) = mean_std(&runs.iter().map(|r| r.final_grad_norm_sq()).collect::<Vec<_>>());
            let gossip =
                runs.iter().map(|r| r.gossip_in_phase(self.controlled_phase).0).sum::<f64>() / runs.len() as f64;
            let _ = writeln!(out, "{label},{},{lm},{ls},{gm},{gs},{gossip},{}", runs.len(), self.config_hash);
        }
        out
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, v.sqrt())
}

fn with_phase(base: &RunConfig, phase: usize, policy: ControlPolicy) -> RunConfig {
    let mut cfg = base.clone();
    cfg.policies[phase - 1] = policy;
    cfg
}

/// Runs, per seed: an all-reduce baseline, the uncontrolled pass that
/// measures `Xi_max`, then every requested control setting applied to the
/// controlled phase (other phases keep their baseline policy).
pub fn dsgd_phase_experiment(config: &ExperimentConfig) -> Result<PhaseExperiment> {
    config.validate()?;
    let dp = &config.dsgd_phases;
    let k = dp.controlled_phase;
    let mut runs = Vec::new();
    let mut xi_max = Vec::new();
    for &seed in &config.seeds {
        let base = config.run_config(seed)?;
        let setup = RunSetup::new(&base)?;
        let mut push = |label: String, cfg: RunConfig| -> Result<MetricsTrace> {
            let trace = run_with(&cfg, &setup)?;
            runs.push(PhaseRun { label, seed, policies: cfg.policies.clone(), trace: trace.clone() });
            Ok(trace)
        };
        let mut all_reduce = base.clone();
        all_reduce.policies.fill(ControlPolicy::all_reduce());
        push("all-reduce".into(), all_reduce)?;
        let pass1 = push("uncontrolled".into(), with_phase(&base, k, ControlPolicy::uncontrolled()))?;
        let phase_max = pass1.phase_xi_max();
        let target_max = phase_max.iter().find(|(p, _)| *p == k).map_or(0.0, |(_, x)| *x);
        xi_max.push((seed, phase_max));
        for &factor in &dp.factors {
            let policy = ControlPolicy::new(ControlMode::ConstantTarget { factor, xi_max: Some(target_max) });
            push(policy.label(), with_phase(&base, k, policy))?;
        }
        for &scale in &dp.adaptive_scales {
            let policy = ControlPolicy::new(ControlMode::AdaptiveTarget { scale });
            push(policy.label(), with_phase(&base, k, policy))?;
        }
        for &q in &dp.theta_q {
            let policy = ControlPolicy::new(ControlMode::EfficientTheta { q });
            push(policy.label(), with_phase(&base, k, policy))?;
        }
    }
    Ok(PhaseExperiment { controlled_phase: k, config_hash: config.hash(), xi_max, runs })
}
