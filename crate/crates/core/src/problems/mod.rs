//! Distributed objectives `f(x) = (1/n) sum_i f_i(x)` with stochastic gradient
//! oracles and measurable smoothness, noise and diversity constants.

mod logistic;
mod mlp;
mod quadratic;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dist_sq, norm_sq};
use crate::rng::{stream, SimRng, Stream};

pub use logistic::{Logistic, Shard, LOGISTIC_L2};
pub use mlp::{TinyMlp, DATASET_SIZE, HIDDEN, MLP_DIM};
pub use quadratic::Quadratic;

/// Per-node objective. Implementations must be deterministic given the RNG.
pub trait LocalObjective: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;
    fn nodes(&self) -> usize;
    fn node_loss(&self, node: usize, x: &[f64]) -> f64;
    fn node_grad(&self, node: usize, x: &[f64]) -> Vec<f64>;
    fn node_stochastic_grad(&self, node: usize, x: &[f64], rng: &mut SimRng) -> Vec<f64>;
    /// `E ||grad F_i(x, xi) - grad f_i(x)||^2`.
    fn node_noise_variance(&self, node: usize, x: &[f64]) -> f64;
    /// Known smoothness constant, if available in closed form.
    fn smoothness(&self) -> Option<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    TinyMlp,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Logistic => "logistic",
            ProblemKind::TinyMlp => "tiny-mlp",
        }
    }
}

fn default_dim() -> usize {
    16
}
fn default_curvature() -> [f64; 2] {
    [0.1, 1.0]
}
fn default_samples() -> usize {
    32
}
fn default_batch() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Parameter dimension (fixed by the architecture for `tiny-mlp`).
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Standard deviation of the gradient noise (quadratic only).
    #[serde(default)]
    pub noise_scale: f64,
    /// Magnitude of the per-node shift of targets or inputs.
    #[serde(default)]
    pub heterogeneity: f64,
    /// Blend between a shared and per-node curvature eigenbasis (quadratic only).
    #[serde(default)]
    pub hessian_heterogeneity: f64,
    /// Range of the quadratic curvature spectrum.
    #[serde(default = "default_curvature")]
    pub curvature: [f64; 2],
    #[serde(default = "default_samples")]
    pub samples_per_node: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Seed of the synthetic data; independent of the training seed.
    #[serde(default)]
    pub data_seed: u64,
}

impl ProblemSpec {
    pub fn quadratic(dim: usize, noise_scale: f64) -> Self {
        Self {
            kind: ProblemKind::Quadratic,
            dim,
            noise_scale,
            heterogeneity: 0.0,
            hessian_heterogeneity: 0.0,
            curvature: default_curvature(),
            samples_per_node: default_samples(),
            batch_size: default_batch(),
            data_seed: 0,
        }
    }

    pub fn with_kind(mut self, kind: ProblemKind) -> Self {
        self.kind = kind;
        self
    }
}

/// Constants of the smoothness, noise and diversity assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub l: f64,
    pub sigma2: f64,
    pub zeta2: f64,
}

#[derive(Debug)]
pub struct Problem {
    kind: ProblemKind,
    objective: Box<dyn LocalObjective>,
}

impl Problem {
    pub fn build(spec: &ProblemSpec, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("problem needs at least one node".into()));
        }
        let mut rng = stream(spec.data_seed, Stream::Data, 0, 0);
        let objective: Box<dyn LocalObjective> = match spec.kind {
            ProblemKind::Quadratic => Box::new(Quadratic::synthetic(
                n,
                spec.dim,
                spec.curvature,
                spec.noise_scale,
                spec.heterogeneity,
                spec.hessian_heterogeneity,
                &mut rng,
            )?),
            ProblemKind::Logistic => Box::new(Logistic::synthetic(
                n,
                spec.dim,
                spec.samples_per_node,
                spec.batch_size,
                spec.heterogeneity,
                &mut rng,
            )?),
            ProblemKind::TinyMlp => Box::new(TinyMlp::synthetic(n, spec.batch_size, spec.heterogeneity, &mut rng)?),
        };
        Ok(Self { kind: spec.kind, objective })
    }

    pub fn from_objective(kind: ProblemKind, objective: Box<dyn LocalObjective>) -> Self {
        Self { kind, objective }
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn n(&self) -> usize {
        self.objective.nodes()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node >= self.n() {
            return Err(Error::InvalidArgument(format!("node {node} out of range for n = {}", self.n())));
        }
        Ok(())
    }

    /// `f(x)`.
    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok((0..self.n()).map(|i| self.objective.node_loss(i, x)).sum::<f64>() / self.n() as f64)
    }

    /// `f_i(x)`.
    pub fn node_loss(&self, node: usize, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        self.check_node(node)?;
        Ok(self.objective.node_loss(node, x))
    }

    /// Exact local gradient `grad f_i(x)`.
    pub fn grad(&self, node: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        self.check_node(node)?;
        Ok(self.objective.node_grad(node, x))
    }

    /// Exact global gradient `grad f(x)`.
    pub fn full_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut g = vec![0.0; self.dim()];
        for i in 0..self.n() {
            axpy(1.0 / self.n() as f64, &self.objective.node_grad(i, x), &mut g);
        }
        Ok(g)
    }

    /// One unbiased stochastic gradient `grad F_i(x, xi)`.
    pub fn stochastic_grad(&self, node: usize, x: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        self.check(x)?;
        self.check_node(node)?;
        Ok(self.objective.node_stochastic_grad(node, x, rng))
    }

    pub fn noise_variance(&self, node: usize, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        self.check_node(node)?;
        Ok(self.objective.node_noise_variance(node, x))
    }

    /// Starting point shared by every node: zero for convex problems, a scaled
    /// Gaussian draw for the network.
    pub fn initial_point(&self, seed: u64) -> Vec<f64> {
        match self.kind {
            ProblemKind::TinyMlp => TinyMlp::init(&mut stream(seed, Stream::Init, 0, 0)),
            _ => vec![0.0; self.dim()],
        }
    }

    /// Ten unit-Gaussian points around the origin plus `current`.
    pub fn probe_points(&self, current: &[f64], seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, Stream::Probe, 0, 0);
        let mut probes: Vec<Vec<f64>> =
            (0..10).map(|_| (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect()).collect();
        probes.push(current.to_vec());
        probes
    }

    /// Smoothness, noise and diversity constants measured at `probes`.
    ///
    /// `L` is exact for quadratics (largest curvature over the nodes) and the
    /// analytic bound for logistic regression; for the network it is the
    /// largest per-node gradient-difference ratio along random rays through
    /// the probes. `sigma^2` and `zeta^2` are maxima over the probes of the
    /// averaged noise and diversity terms.
    pub fn constants(&self, probes: &[Vec<f64>]) -> Result<ProblemConstants> {
        if probes.len() < 10 {
            return Err(Error::InvalidArgument(format!("need at least 10 probe points, got {}", probes.len())));
        }
        let n = self.n() as f64;
        let mut sigma2 = 0.0f64;
        let mut zeta2 = 0.0f64;
        for x in probes {
            self.check(x)?;
            let s: f64 = (0..self.n()).map(|i| self.objective.node_noise_variance(i, x)).sum::<f64>() / n;
            let g = self.full_grad(x)?;
            let z: f64 = (0..self.n()).map(|i| dist_sq(&self.objective.node_grad(i, x), &g)).sum::<f64>() / n;
            sigma2 = sigma2.max(s);
            zeta2 = zeta2.max(z);
        }
        let l = match self.objective.smoothness() {
            Some(l) => l,
            None => self.probe_smoothness(probes)?,
        };
        Ok(ProblemConstants { l, sigma2, zeta2 })
    }

    fn probe_smoothness(&self, probes: &[Vec<f64>]) -> Result<f64> {
        let mut rng = stream(0, Stream::Probe, 1, 0);
        let mut best = 0.0f64;
        for x in probes {
            let dir: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
            for node in 0..self.n() {
                best = best.max(ray_smoothness(|y| self.objective.node_grad(node, y), x, &dir, 0.05));
            }
        }
        Ok(best)
    }

    /// Empirical smoothness along the current update: eight extra points
    /// spaced `0.2 * lr` apart along `direction`, returning the largest
    /// `||grad f(x') - grad f(x'')|| / ||x' - x''||` over consecutive pairs.
    pub fn estimate_smoothness(&self, x: &[f64], direction: &[f64], lr: f64) -> Result<f64> {
        self.check(x)?;
        self.check(direction)?;
        if norm_sq(direction) == 0.0 {
            return Err(Error::InvalidArgument("update direction must be nonzero".into()));
        }
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument("lr must be positive".into()));
        }
        Ok(ray_smoothness(|y| self.full_grad(y).expect("dimension checked"), x, direction, 0.2 * lr))
    }
}

fn ray_smoothness(grad: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], dir: &[f64], step: f64) -> f64 {
    let mut prev_x = x.to_vec();
    let mut prev_g = grad(&prev_x);
    let mut best = 0.0f64;
    for _ in 0..8 {
        let mut next_x = prev_x.clone();
        axpy(step, dir, &mut next_x);
        let next_g = grad(&next_x);
        let dx = dist_sq(&next_x, &prev_x).sqrt();
        if dx > 0.0 {
            best = best.max(dist_sq(&next_g, &prev_g).sqrt() / dx);
        }
        prev_x = next_x;
        prev_g = next_g;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn scalar_quadratic(a: &[f64], noise: f64) -> Problem {
        let mats = a.iter().map(|&ai| Matrix::from_rows(&[vec![ai.sqrt()]]).unwrap()).collect();
        let b = a.iter().map(|_| vec![0.0]).collect();
        Problem::from_objective(ProblemKind::Quadratic, Box::new(Quadratic::new(mats, b, noise).unwrap()))
    }

    #[test]
    fn identity_quadratic_minimum() {
        let q = Quadratic::new(vec![Matrix::identity(3); 2], vec![vec![0.0; 3]; 2], 0.0).unwrap();
        let p = Problem::from_objective(ProblemKind::Quadratic, Box::new(q));
        assert_eq!(p.loss(&[0.0; 3]).unwrap(), 0.0);
        let probes = vec![vec![0.5; 3]; 10];
        assert_eq!(p.constants(&probes).unwrap().l, 1.0);
    }

    #[test]
    fn scalar_quadratic_loss() {
        let p = scalar_quadratic(&[1.0, 1.0, 1.0], 0.0);
        assert!((p.loss(&[2.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn diversity_of_two_curvatures() {
        let p = scalar_quadratic(&[1.0, 3.0], 0.0);
        let c = p.constants(&vec![vec![1.0]; 10]).unwrap();
        assert!((c.zeta2 - 1.0).abs() < 1e-12);
        assert!((c.l - 3.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_quadratic_gradient_is_exact() {
        let spec = ProblemSpec { hessian_heterogeneity: 0.5, heterogeneity: 0.3, ..ProblemSpec::quadratic(4, 0.0) };
        let p = Problem::build(&spec, 3).unwrap();
        let x = [0.3, -0.2, 1.0, 0.5];
        let mut rng = stream(0, Stream::Gradient, 0, 0);
        assert_eq!(p.stochastic_grad(1, &x, &mut rng).unwrap(), p.grad(1, &x).unwrap());
    }

    #[test]
    fn identical_shards_have_no_diversity() {
        for kind in [ProblemKind::Quadratic, ProblemKind::Logistic, ProblemKind::TinyMlp] {
            let spec = ProblemSpec::quadratic(5, 1.0).with_kind(kind);
            let p = Problem::build(&spec, 4).unwrap();
            let probes = p.probe_points(&p.initial_point(0), 3);
            let c = p.constants(&probes).unwrap();
            assert!(c.zeta2 <= 1e-10, "{kind:?}: zeta2 = {}", c.zeta2);
        }
    }

    #[test]
    fn heterogeneity_creates_diversity() {
        for kind in [ProblemKind::Quadratic, ProblemKind::Logistic, ProblemKind::TinyMlp] {
            let spec = ProblemSpec { heterogeneity: 1.0, ..ProblemSpec::quadratic(5, 1.0).with_kind(kind) };
            let p = Problem::build(&spec, 4).unwrap();
            let probes = p.probe_points(&p.initial_point(0), 3);
            assert!(p.constants(&probes).unwrap().zeta2 > 1e-3, "{kind:?}");
        }
    }

    #[test]
    fn constants_need_ten_probes() {
        let p = scalar_quadratic(&[1.0], 0.0);
        assert!(matches!(p.constants(&vec![vec![1.0]; 9]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn smoothness_of_scalar_quadratic_is_exact() {
        let p = scalar_quadratic(&[2.5], 0.0);
        for (x, d) in [(1.0, 1.0), (-3.0, -0.2), (0.0, 7.0)] {
            let l = p.estimate_smoothness(&[x], &[d], 0.1).unwrap();
            assert!((l - 2.5).abs() < 1e-12, "{l}");
        }
    }

    #[test]
    fn zero_direction_rejected() {
        let p = scalar_quadratic(&[1.0], 0.0);
        assert!(p.estimate_smoothness(&[1.0], &[0.0], 0.1).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let p = scalar_quadratic(&[1.0], 0.0);
        assert!(matches!(p.loss(&[1.0, 2.0]), Err(Error::DimensionMismatch { expected: 1, got: 2 })));
    }

    #[test]
    fn mlp_smoothness_finite_positive() {
        let spec = ProblemSpec::quadratic(0, 0.0).with_kind(ProblemKind::TinyMlp);
        let p = Problem::build(&spec, 4).unwrap();
        assert_eq!(p.dim(), MLP_DIM);
        let x = p.initial_point(1);
        let dir = p.full_grad(&x).unwrap().iter().map(|g| -g).collect::<Vec<_>>();
        let l = p.estimate_smoothness(&x, &dir, 0.1).unwrap();
        assert!(l.is_finite() && l > 0.0);
    }

    #[test]
    fn minibatch_noise_variance_matches_empirical() {
        let spec = ProblemSpec { batch_size: 4, samples_per_node: 20, ..ProblemSpec::quadratic(3, 0.0) }
            .with_kind(ProblemKind::Logistic);
        let p = Problem::build(&spec, 2).unwrap();
        let x = [0.2, -0.4, 0.1];
        let exact = p.grad(0, &x).unwrap();
        let mut rng = stream(9, Stream::Gradient, 0, 0);
        let trials = 20000;
        let emp = (0..trials).map(|_| dist_sq(&p.stochastic_grad(0, &x, &mut rng).unwrap(), &exact)).sum::<f64>()
            / trials as f64;
        let declared = p.noise_variance(0, &x).unwrap();
        assert!((emp - declared).abs() / declared < 0.05, "emp {emp} declared {declared}");
    }
}
