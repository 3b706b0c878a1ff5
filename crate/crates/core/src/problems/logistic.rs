use rand::Rng;
use rand_distr::StandardNormal;

use super::LocalObjective;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dist_sq, dot, norm_sq, Matrix};
use crate::rng::SimRng;

/// L2 penalty keeping the minimizer finite on separable shards.
pub const LOGISTIC_L2: f64 = 1e-2;

/// Binary logistic regression, labels in `{-1, +1}`, minibatch gradients
/// sampled with replacement.
#[derive(Debug, Clone)]
pub struct Logistic {
    shards: Vec<Shard>,
    dim: usize,
    batch_size: usize,
    smoothness: f64,
}

#[derive(Debug, Clone)]
pub struct Shard {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    pub fn new(shards: Vec<Shard>, batch_size: usize) -> Result<Self> {
        let dim = shards
            .first()
            .and_then(|s| s.features.first())
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("logistic problem needs non-empty shards".into()))?;
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let mut smoothness = 0.0f64;
        for s in &shards {
            if s.features.is_empty() || s.features.len() != s.labels.len() {
                return Err(Error::InvalidArgument("every shard needs matching features and labels".into()));
            }
            if let Some(bad) = s.features.iter().find(|f| f.len() != dim) {
                return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
            }
            let m = s.features.len() as f64;
            let cov = Matrix::from_fn(dim, dim, |i, j| s.features.iter().map(|f| f[i] * f[j]).sum::<f64>() / m);
            smoothness = smoothness.max(cov.symmetric_eigenvalues()?[0] / 4.0 + LOGISTIC_L2);
        }
        Ok(Self { shards, dim, batch_size, smoothness })
    }

    pub fn synthetic(
        n: usize,
        dim: usize,
        samples_per_node: usize,
        batch_size: usize,
        heterogeneity: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if dim == 0 || samples_per_node == 0 {
            return Err(Error::Config("logistic problem needs dim > 0 and samples_per_node > 0".into()));
        }
        // One base sample set; node i sees it shifted by heterogeneity * u_i.
        let w_true: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
        let mut base = Vec::with_capacity(samples_per_node);
        let mut labels = Vec::with_capacity(samples_per_node);
        for _ in 0..samples_per_node {
            let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let margin = dot(&w_true, &z) + 0.5 * rng.sample::<f64, _>(StandardNormal);
            labels.push(if margin >= 0.0 { 1.0 } else { -1.0 });
            base.push(z);
        }
        let shards = (0..n)
            .map(|_| {
                let mut shift: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = norm_sq(&shift).sqrt();
                shift.iter_mut().for_each(|v| *v *= heterogeneity / norm);
                let features = base
                    .iter()
                    .map(|z| {
                        let mut z = z.clone();
                        axpy(1.0, &shift, &mut z);
                        z
                    })
                    .collect();
                Shard { features, labels: labels.clone() }
            })
            .collect();
        Self::new(shards, batch_size)
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    fn sample_grad(&self, node: usize, k: usize, x: &[f64]) -> Vec<f64> {
        let s = &self.shards[node];
        let z = &s.features[k];
        let y = s.labels[k];
        let coef = -y * sigmoid(-y * dot(z, x));
        let mut g: Vec<f64> = x.iter().map(|v| LOGISTIC_L2 * v).collect();
        axpy(coef, z, &mut g);
        g
    }
}

impl LocalObjective for Logistic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn nodes(&self) -> usize {
        self.shards.len()
    }

    fn node_loss(&self, node: usize, x: &[f64]) -> f64 {
        let s = &self.shards[node];
        let data: f64 = s.features.iter().zip(&s.labels).map(|(z, y)| softplus(-y * dot(z, x))).sum::<f64>()
            / s.labels.len() as f64;
        data + 0.5 * LOGISTIC_L2 * norm_sq(x)
    }

    fn node_grad(&self, node: usize, x: &[f64]) -> Vec<f64> {
        let m = self.shards[node].labels.len();
        let mut g = vec![0.0; self.dim];
        for k in 0..m {
            axpy(1.0 / m as f64, &self.sample_grad(node, k, x), &mut g);
        }
        g
    }

    fn node_stochastic_grad(&self, node: usize, x: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let m = self.shards[node].labels.len();
        let mut g = vec![0.0; self.dim];
        for _ in 0..self.batch_size {
            let k = rng.random_range(0..m);
            axpy(1.0 / self.batch_size as f64, &self.sample_grad(node, k, x), &mut g);
        }
        g
    }

    fn node_noise_variance(&self, node: usize, x: &[f64]) -> f64 {
        // sampling with replacement: Var(mean of B draws) = Var(single draw) / B
        let full = self.node_grad(node, x);
        let m = self.shards[node].labels.len();
        let single = (0..m).map(|k| dist_sq(&self.sample_grad(node, k, x), &full)).sum::<f64>() / m as f64;
        single / self.batch_size as f64
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }
}
