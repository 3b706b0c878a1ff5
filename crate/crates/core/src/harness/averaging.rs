use std::fmt::Write as _;

use rand::Rng;

use super::ExperimentConfig;
use crate::consensus::{consensus_distance, Gossiper};
use crate::error::Result;
use crate::rng::{stream, Stream};
use crate::states::NodeStates;
use crate::topology::{TopologyKind, TopologySpec};

/// `Xi^2` after each gossip step (index 0 is the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingCurve {
    pub topology: TopologyKind,
    pub n: usize,
    pub seed: u64,
    pub xi_sq: Vec<f64>,
}

impl AveragingCurve {
    /// First step at which `Xi <= threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<usize> {
        self.xi_sq.iter().position(|x| x.sqrt() <= threshold)
    }
}

/// Gossip scalars drawn uniformly from `[0, 10]` until `Xi <= tolerance` or
/// `max_steps` steps.
pub fn averaging_curve(
    kind: TopologyKind,
    n: usize,
    seed: u64,
    tolerance: f64,
    max_steps: usize,
) -> Result<AveragingCurve> {
    let spec = TopologySpec::new(kind, n, 0)?;
    let mut rng = stream(seed, Stream::Init, n as u64, kind as u64);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..=10.0)]).collect();
    let mut states = NodeStates::from_rows(&rows)?;
    let mut gossiper = Gossiper::new(spec, seed)?;
    let mut xi_sq = vec![consensus_distance(&states)];
    while xi_sq.last().is_some_and(|x| x.sqrt() > tolerance) && xi_sq.len() <= max_steps {
        gossiper.gossip(&mut states)?;
        xi_sq.push(consensus_distance(&states));
    }
    Ok(AveragingCurve { topology: kind, n, seed, xi_sq })
}

pub fn consensus_averaging_experiment(config: &ExperimentConfig) -> Result<Vec<AveragingCurve>> {
    let a = &config.consensus_avg;
    let mut curves = Vec::new();
    for &n in &a.sizes {
        for &kind in &a.topologies {
            for &seed in &config.seeds {
                curves.push(averaging_curve(kind, n, seed, a.tolerance, a.max_steps)?);
            }
        }
    }
    Ok(curves)
}

/// Long-format curves: `topology,n,seed,step,xi_sq`.
pub fn curves_csv(curves: &[AveragingCurve]) -> String {
    let mut out = String::from("topology,n,seed,step,xi_sq\n");
    for c in curves {
        for (step, x) in c.xi_sq.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{step},{x}", c.topology, c.n, c.seed);
        }
    }
    out
}

/// `topology,n,seed,steps,final_xi_sq,config_hash`; `steps` is empty when
/// the tolerance was not reached.
pub fn averaging_summary_csv(curves: &[AveragingCurve], tolerance: f64, hash: &str) -> String {
    let mut out = String::from("topology,n,seed,steps,final_xi_sq,config_hash\n");
    for c in curves {
        let steps = c.steps_to(tolerance).map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{steps},{},{hash}",
            c.topology,
            c.n,
            c.seed,
            c.xi_sq.last().copied().unwrap_or(0.0)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph_needs_one_step() {
        let c = averaging_curve(TopologyKind::Complete, 16, 0, 1e-8, 100).unwrap();
        assert_eq!(c.steps_to(1e-8), Some(1));
        assert!(c.xi_sq[0] > 1.0);
    }

    #[test]
    fn gives_up_after_max_steps() {
        let c = averaging_curve(TopologyKind::FixedRing, 32, 0, 1e-8, 10).unwrap();
        assert_eq!(c.xi_sq.len(), 11);
        assert_eq!(c.steps_to(1e-8), None);
    }
}
