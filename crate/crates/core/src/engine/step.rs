use crate::error::{Error, Result};
use crate::linalg::{axpy, norm_sq};
use crate::problems::Problem;
use crate::rng::{stream, Stream};
use crate::states::NodeStates;
use crate::topology::MixingMatrix;

/// Parameter magnitude beyond which a run is considered divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Per-step randomness and optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub seed: u64,
    pub iteration: usize,
    /// Nesterov coefficient; 0 disables momentum.
    pub momentum: f64,
}

impl StepContext {
    pub fn new(seed: u64, iteration: usize) -> Self {
        Self { seed, iteration, momentum: 0.0 }
    }
}

/// Gradient statistics of one step, evaluated at the pre-step iterates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// `(1/n) sum_i ||grad F_i(x_i, xi_i)||`.
    pub phi_bar: f64,
    /// `(1/n) sum_i ||grad f_i(x_i)||^2`.
    pub phi_sq: f64,
}

/// Stochastic gradients of every node at its current iterate. Node `i` at
/// iteration `t` draws from its own stream, independent of evaluation order.
pub fn stochastic_gradients(states: &NodeStates, problem: &Problem, ctx: &StepContext) -> Result<Vec<Vec<f64>>> {
    check_nodes(states, problem)?;
    (0..states.n())
        .map(|i| {
            let mut rng = stream(ctx.seed, Stream::Gradient, i as u64, ctx.iteration as u64);
            problem.stochastic_grad(i, states.node(i), &mut rng)
        })
        .collect()
}

fn check_nodes(states: &NodeStates, problem: &Problem) -> Result<()> {
    if states.n() != problem.n() {
        return Err(Error::DimensionMismatch { expected: problem.n(), got: states.n() });
    }
    Ok(())
}

/// Gradient part of the update: every node steps on its own stochastic
/// gradient (with Nesterov momentum when enabled). No communication.
pub fn local_step(states: &mut NodeStates, problem: &Problem, lr: f64, ctx: &StepContext) -> Result<StepStats> {
    let grads = stochastic_gradients(states, problem, ctx)?;
    let n = states.n();
    let mut phi_sq = 0.0;
    for i in 0..n {
        phi_sq += norm_sq(&problem.grad(i, states.node(i))?);
    }
    let phi_bar = grads.iter().map(|g| norm_sq(g).sqrt()).sum::<f64>() / n as f64;
    if ctx.momentum != 0.0 {
        states.ensure_momentum();
    }
    for (i, g) in grads.iter().enumerate() {
        let direction = match states.momentum_row_mut(i) {
            Some(m) => {
                m.iter_mut().zip(g).for_each(|(m, g)| *m = ctx.momentum * *m + g);
                g.iter().zip(m.iter()).map(|(g, m)| g + ctx.momentum * m).collect()
            }
            None => g.clone(),
        };
        axpy(-lr, &direction, states.node_mut(i));
    }
    check_divergence(states, ctx.iteration)?;
    Ok(StepStats { phi_bar, phi_sq: phi_sq / n as f64 })
}

pub fn check_divergence(states: &NodeStates, iteration: usize) -> Result<()> {
    let m = states.max_abs();
    if m > DIVERGENCE_THRESHOLD {
        return Err(Error::Divergence {
            iteration,
            detail: format!("max |x| = {m:e} exceeds {DIVERGENCE_THRESHOLD:e}"),
        });
    }
    Ok(())
}

/// One D-SGD step: local stochastic-gradient step, then mixing with `w`.
pub fn dsgd_step(
    states: &mut NodeStates,
    problem: &Problem,
    w: &MixingMatrix,
    lr: f64,
    ctx: &StepContext,
) -> Result<StepStats> {
    if w.n() != states.n() {
        return Err(Error::DimensionMismatch { expected: states.n(), got: w.n() });
    }
    let stats = local_step(states, problem, lr, ctx)?;
    let mixed = w.apply(states.params())?;
    states.set_params(mixed)?;
    check_divergence(states, ctx.iteration)?;
    Ok(stats)
}

/// One centralized mini-batch SGD step on identical nodes:
/// `x <- x - lr (1/n) sum_i grad F_i(x, xi_i)`.
pub fn csgd_step(states: &mut NodeStates, problem: &Problem, lr: f64, ctx: &StepContext) -> Result<StepStats> {
    if !states.all_identical() {
        return Err(Error::InvalidArgument("C-SGD requires identical node states".into()));
    }
    let stats = local_step(states, problem, lr, ctx)?;
    states.average_exact();
    Ok(stats)
}
