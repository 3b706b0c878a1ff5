//! Consensus quantities and consensus-distance control.
//!
//! Distances are compared unsquared (`xi`, `theta`) against control targets;
//! squared values (`xi_sq`, `theta_sq`, ...) are what gets logged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, Matrix};
use crate::problems::ProblemConstants;
use crate::rng::{stream, Stream};
use crate::states::NodeStates;
use crate::topology::{build_mixing, MixingMatrix, TopologySpec};

pub const DEFAULT_MAX_GOSSIP: usize = 1000;
pub const DEFAULT_EMA_BETA: f64 = 0.9;

/// `Xi^2 = (1/n) sum_i ||x_bar - x_i||^2`.
pub fn consensus_distance(states: &NodeStates) -> f64 {
    let mean = states.mean();
    (0..states.n()).map(|i| dist_sq(states.node(i), &mean)).sum::<f64>() / states.n() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    /// `Theta^2 = (1/n) sum_i theta_i`.
    pub theta_sq: f64,
    /// `theta_i = ||sum_j w_ij x_j - x_i||^2`, computable from node i's neighborhood.
    pub per_node: Vec<f64>,
}

/// Local upper-bound estimator of the consensus distance.
pub fn local_estimator(states: &NodeStates, w: &MixingMatrix) -> Result<ThetaEstimate> {
    let n = states.n();
    if w.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: w.n() });
    }
    let weights = w.weights();
    let per_node: Vec<f64> = (0..n)
        .map(|i| {
            let mut mixed = vec![0.0; states.dim()];
            for j in 0..n {
                let wij = weights[(i, j)];
                if wij != 0.0 {
                    crate::linalg::axpy(wij, states.node(j), &mut mixed);
                }
            }
            dist_sq(&mixed, states.node(i))
        })
        .collect();
    let theta_sq = per_node.iter().sum::<f64>() / n as f64;
    Ok(ThetaEstimate { theta_sq, per_node })
}

/// Critical consensus distance `Gamma^2 = lr sigma^2 / (L n) + ||grad f(x_bar)||^2 / (8 L^2)`.
pub fn critical_distance(grad_norm_sq: f64, lr: f64, constants: &ProblemConstants, n: usize) -> Result<f64> {
    let l = constants.l;
    if !(l > 0.0) {
        return Err(Error::InvalidArgument(format!("critical distance needs L > 0, got {l}")));
    }
    Ok(lr * constants.sigma2 / (l * n as f64) + grad_norm_sq / (8.0 * l * l))
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("mixing parameter must be in (0, 1], got {p}")));
    }
    Ok(())
}

/// Typical consensus distance with explicit constants:
/// `12 (1 - p) gamma^2 (phi^2 / p^2 + sigma^2 / p)`.
pub fn typical_distance_bound(prev_phi_sq: f64, gamma: f64, p: f64, sigma2: f64) -> Result<f64> {
    check_p(p)?;
    Ok(12.0 * (1.0 - p) * gamma * gamma * (prev_phi_sq / (p * p) + sigma2 / p))
}

/// One-step bound on the next consensus distance:
/// `(1 - p/2) Xi_t^2 + 3 (1 - p) gamma^2 / p * (phi_t^2 + p sigma^2)`.
pub fn recursion_bound(xi_sq: f64, phi_sq: f64, gamma: f64, p: f64, sigma2: f64) -> Result<f64> {
    check_p(p)?;
    Ok((1.0 - p / 2.0) * xi_sq + 3.0 * (1.0 - p) * gamma * gamma / p * (phi_sq + p * sigma2))
}

/// Which sufficient conditions for reaching the critical distance hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SufficientReport {
    /// `p / (4 n L C)`.
    pub max_stepsize: f64,
    pub stepsize_ok: bool,
    /// `1 / (5 C (1 + gamma L n))`, the allowed `1 - p`.
    pub max_one_minus_p: f64,
    /// Mixing condition together with `gamma <= 1/(4L)`.
    pub mixing_ok: bool,
    /// Gossip repetitions `ceil(ln(1 + gamma L n) / p)` that suffice.
    pub repeated_gossip_k: usize,
}

pub fn sufficient_conditions(
    constants: &ProblemConstants,
    n: usize,
    gamma: f64,
    p: f64,
    c: f64,
) -> Result<SufficientReport> {
    check_p(p)?;
    let l = constants.l;
    if !(l > 0.0) || c < 2.0 {
        return Err(Error::InvalidArgument(format!("need L > 0 and C >= 2 (L = {l}, C = {c})")));
    }
    let nf = n as f64;
    let max_stepsize = p / (4.0 * nf * l * c);
    let max_one_minus_p = 1.0 / (5.0 * c * (1.0 + gamma * l * nf));
    Ok(SufficientReport {
        max_stepsize,
        stepsize_ok: gamma <= max_stepsize,
        max_one_minus_p,
        mixing_ok: 1.0 - p <= max_one_minus_p && gamma <= 1.0 / (4.0 * l),
        repeated_gossip_k: ((1.0 + gamma * l * nf).ln() / p).ceil() as usize,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControlMode {
    /// Exact averaging.
    AllReduce,
    /// One gossip step per iteration.
    Uncontrolled,
    /// Gossip until `Xi <= factor * xi_max`; `xi_max` is the phase maximum of
    /// an uncontrolled run and is filled in before the run starts.
    ConstantTarget {
        factor: f64,
        #[serde(default)]
        xi_max: Option<f64>,
    },
    /// Gossip until `Xi <= scale * EMA(phi_bar)`.
    AdaptiveTarget { scale: f64 },
    /// Gossip until `Theta < q * EMA(phi_bar)`, never consulting `Xi`.
    EfficientTheta { q: f64 },
}

fn default_max_gossip() -> usize {
    DEFAULT_MAX_GOSSIP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPolicy {
    #[serde(flatten)]
    pub mode: ControlMode,
    #[serde(default = "default_max_gossip")]
    pub max_gossip_per_step: usize,
}

impl ControlPolicy {
    pub fn new(mode: ControlMode) -> Self {
        Self { mode, max_gossip_per_step: DEFAULT_MAX_GOSSIP }
    }

    pub fn all_reduce() -> Self {
        Self::new(ControlMode::AllReduce)
    }

    pub fn uncontrolled() -> Self {
        Self::new(ControlMode::Uncontrolled)
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            ControlMode::ConstantTarget { factor, xi_max } => {
                if !(0.0..=1.0).contains(&factor) {
                    return Err(Error::Config(format!("constant target factor must be in [0, 1], got {factor}")));
                }
                if let Some(x) = xi_max {
                    if !(x >= 0.0 && x.is_finite()) {
                        return Err(Error::Config(format!("xi_max must be finite and >= 0, got {x}")));
                    }
                }
            }
            ControlMode::AdaptiveTarget { scale } if !(scale > 0.0) => {
                return Err(Error::Config(format!("adaptive scale must be > 0, got {scale}")));
            }
            ControlMode::EfficientTheta { q } if !(q > 0.0) => {
                return Err(Error::Config(format!("q must be > 0, got {q}")));
            }
            _ => {}
        }
        if self.max_gossip_per_step == 0 {
            return Err(Error::Config("max_gossip_per_step must be positive".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.mode {
            ControlMode::AllReduce => "all-reduce".into(),
            ControlMode::Uncontrolled => "uncontrolled".into(),
            ControlMode::ConstantTarget { factor, .. } => format!("constant-{factor}"),
            ControlMode::AdaptiveTarget { scale } => format!("adaptive-{scale}"),
            ControlMode::EfficientTheta { q } => format!("theta-{q}"),
        }
    }
}

/// Exponential moving average of the average local gradient norm; reset at
/// every phase boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaTracker {
    value: Option<f64>,
    beta: f64,
}

impl EmaTracker {
    pub fn new(beta: f64) -> Self {
        Self { value: None, beta }
    }

    pub fn update(&mut self, x: f64) -> f64 {
        let v = match self.value {
            None => x,
            Some(prev) => self.beta * prev + (1.0 - self.beta) * x,
        };
        self.value = Some(v);
        v
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reset(&mut self) {
        self.value = None;
    }
}

/// Source of gossip rounds. Fixed topologies reuse one matrix; time-varying
/// ones advance one round per gossip step, so repeated gossip within an
/// iteration samples fresh matrices.
#[derive(Debug, Clone)]
pub struct Gossiper {
    spec: TopologySpec,
    seed: u64,
    rounds: usize,
    current: MixingMatrix,
}

impl Gossiper {
    pub fn new(spec: TopologySpec, seed: u64) -> Result<Self> {
        let current = Self::round(&spec, seed, 0)?;
        Ok(Self { spec, seed, rounds: 0, current })
    }

    fn round(spec: &TopologySpec, seed: u64, round: usize) -> Result<MixingMatrix> {
        let mut rng = stream(seed ^ spec.seed, Stream::Topology, round as u64, 0);
        build_mixing(spec, round, &mut rng)
    }

    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    /// Gossip rounds performed so far.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// The fixed matrix, for fixed topologies.
    pub fn fixed(&self) -> Option<&MixingMatrix> {
        self.spec.is_fixed().then_some(&self.current)
    }

    /// The most recently used matrix (round 0 before any gossip).
    pub fn current(&self) -> &MixingMatrix {
        &self.current
    }

    /// One gossip step.
    pub fn gossip(&mut self, states: &mut NodeStates) -> Result<()> {
        if !self.spec.is_fixed() {
            self.current = Self::round(&self.spec, self.seed, self.rounds)?;
        }
        self.rounds += 1;
        let mixed = self.current.apply(states.params())?;
        states.set_params(mixed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInputs {
    pub iteration: usize,
    /// `EMA(phi_bar)` of the current phase.
    pub phi_ema: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutcome {
    pub gossip_steps: usize,
    /// The distance target the exit test compared against, if any.
    pub target: Option<f64>,
}

/// Communicate after a local step according to `policy`.
///
/// All-reduce and zero targets average exactly (one step). Other targets
/// gossip until met, counting the first gossip step, and fail once
/// `max_gossip_per_step` steps have not sufficed.
pub fn control_gossip(
    states: &mut NodeStates,
    gossiper: &mut Gossiper,
    policy: &ControlPolicy,
    inputs: &ControlInputs,
) -> Result<ControlOutcome> {
    let target = match policy.mode {
        ControlMode::AllReduce => {
            states.average_exact();
            return Ok(ControlOutcome { gossip_steps: 1, target: None });
        }
        ControlMode::Uncontrolled => {
            gossiper.gossip(states)?;
            return Ok(ControlOutcome { gossip_steps: 1, target: None });
        }
        ControlMode::ConstantTarget { factor, xi_max } => {
            let xi_max =
                xi_max.ok_or_else(|| Error::Config("constant target needs xi_max from an uncontrolled pass".into()))?;
            factor * xi_max
        }
        ControlMode::AdaptiveTarget { scale } => scale * ema(inputs)?,
        ControlMode::EfficientTheta { q } => {
            return theta_control(states, gossiper, q * ema(inputs)?, policy, inputs);
        }
    };
    if target <= 0.0 {
        states.average_exact();
        return Ok(ControlOutcome { gossip_steps: 1, target: Some(0.0) });
    }
    let mut steps = 0;
    loop {
        gossiper.gossip(states)?;
        steps += 1;
        let xi = consensus_distance(states).sqrt();
        if xi <= target {
            return Ok(ControlOutcome { gossip_steps: steps, target: Some(target) });
        }
        if steps >= policy.max_gossip_per_step {
            return Err(Error::UnreachableTarget {
                iteration: inputs.iteration,
                achieved_xi: xi,
                target,
                gossip_steps: steps,
            });
        }
    }
}

fn ema(inputs: &ControlInputs) -> Result<f64> {
    inputs.phi_ema.ok_or_else(|| Error::InvalidArgument("adaptive control needs EMA(phi_bar)".into()))
}

fn theta_control(
    states: &mut NodeStates,
    gossiper: &mut Gossiper,
    target: f64,
    policy: &ControlPolicy,
    inputs: &ControlInputs,
) -> Result<ControlOutcome> {
    if !gossiper.spec().is_fixed() {
        return Err(Error::Config("theta control needs a fixed mixing matrix".into()));
    }
    let mut steps = 0;
    loop {
        gossiper.gossip(states)?;
        steps += 1;
        let theta = local_estimator(states, gossiper.current())?.theta_sq.sqrt();
        if theta < target || theta == 0.0 {
            return Ok(ControlOutcome { gossip_steps: steps, target: Some(target) });
        }
        if steps >= policy.max_gossip_per_step {
            return Err(Error::UnreachableTarget {
                iteration: inputs.iteration,
                achieved_xi: consensus_distance(states).sqrt(),
                target,
                gossip_steps: steps,
            });
        }
    }
}

/// `(1/n) ||X W - X||_F^2` written with matrices, for cross-checking the
/// per-node estimator.
pub fn theta_sq_matrix_form(states: &NodeStates, w: &MixingMatrix) -> Result<f64> {
    let mixed: Matrix = w.apply(states.params())?;
    let n = states.n();
    Ok((0..n).map(|i| dist_sq(mixed.row(i), states.node(i))).sum::<f64>() / n as f64)
}

/// `||grad||` averaged over nodes.
pub fn mean_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().map(|g| dot(g, g).sqrt()).sum::<f64>() / grads.len() as f64
}
