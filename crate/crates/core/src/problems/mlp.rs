use rand::Rng;
use rand_distr::StandardNormal;

use super::LocalObjective;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dist_sq};
use crate::rng::SimRng;

pub const HIDDEN: usize = 16;
const INPUTS: usize = 2;
const CLASSES: usize = 2;
pub const DATASET_SIZE: usize = 512;

/// Parameter count: `W1 (H x 2), b1 (H), W2 (2 x H), b2 (2)`.
pub const MLP_DIM: usize = HIDDEN * INPUTS + HIDDEN + CLASSES * HIDDEN + CLASSES;

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * INPUTS;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + CLASSES * HIDDEN;

/// One-hidden-layer tanh network with softmax cross-entropy on a two-class
/// XOR-style Gaussian mixture of 512 points in the plane.
#[derive(Debug, Clone)]
pub struct TinyMlp {
    shards: Vec<Vec<([f64; 2], usize)>>,
    batch_size: usize,
}

impl TinyMlp {
    pub fn synthetic(n: usize, batch_size: usize, heterogeneity: f64, rng: &mut SimRng) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        const CENTERS: [([f64; 2], usize); 4] =
            [([1.0, 1.0], 0), ([-1.0, -1.0], 0), ([1.0, -1.0], 1), ([-1.0, 1.0], 1)];
        let base: Vec<([f64; 2], usize)> = (0..DATASET_SIZE)
            .map(|_| {
                let (c, label) = CENTERS[rng.random_range(0..CENTERS.len())];
                let p = [
                    c[0] + 0.4 * rng.sample::<f64, _>(StandardNormal),
                    c[1] + 0.4 * rng.sample::<f64, _>(StandardNormal),
                ];
                (p, label)
            })
            .collect();
        // Every node holds the dataset, shifted by heterogeneity * u_i.
        let shards = (0..n)
            .map(|_| {
                let angle = rng.random::<f64>() * std::f64::consts::TAU;
                let shift = [heterogeneity * angle.cos(), heterogeneity * angle.sin()];
                base.iter().map(|&(p, y)| ([p[0] + shift[0], p[1] + shift[1]], y)).collect()
            })
            .collect();
        Ok(Self { shards, batch_size })
    }

    /// Scaled Gaussian initialization (variance `1/fan_in`), zero biases.
    pub fn init(rng: &mut SimRng) -> Vec<f64> {
        let mut x = vec![0.0; MLP_DIM];
        for v in &mut x[W1..B1] {
            *v = rng.sample::<f64, _>(StandardNormal) / (INPUTS as f64).sqrt();
        }
        for v in &mut x[W2..B2] {
            *v = rng.sample::<f64, _>(StandardNormal) / (HIDDEN as f64).sqrt();
        }
        x
    }

    fn forward(x: &[f64], input: [f64; 2]) -> ([f64; HIDDEN], [f64; CLASSES]) {
        let mut hidden = [0.0; HIDDEN];
        for (h, out) in hidden.iter_mut().enumerate() {
            let w = &x[W1 + h * INPUTS..W1 + (h + 1) * INPUTS];
            *out = (w[0] * input[0] + w[1] * input[1] + x[B1 + h]).tanh();
        }
        let mut logits = [0.0; CLASSES];
        for (c, out) in logits.iter_mut().enumerate() {
            let w = &x[W2 + c * HIDDEN..W2 + (c + 1) * HIDDEN];
            *out = w.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() + x[B2 + c];
        }
        (hidden, logits)
    }

    fn softmax(logits: [f64; CLASSES]) -> [f64; CLASSES] {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p = logits.map(|z| (z - m).exp());
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }

    fn sample_loss(x: &[f64], input: [f64; 2], label: usize) -> f64 {
        let (_, logits) = Self::forward(x, input);
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        lse - logits[label]
    }

    fn sample_grad(x: &[f64], input: [f64; 2], label: usize) -> Vec<f64> {
        let (hidden, logits) = Self::forward(x, input);
        let mut dz = Self::softmax(logits);
        dz[label] -= 1.0;
        let mut g = vec![0.0; MLP_DIM];
        for c in 0..CLASSES {
            for h in 0..HIDDEN {
                g[W2 + c * HIDDEN + h] = dz[c] * hidden[h];
            }
            g[B2 + c] = dz[c];
        }
        for h in 0..HIDDEN {
            let dh: f64 = (0..CLASSES).map(|c| x[W2 + c * HIDDEN + h] * dz[c]).sum();
            let da = dh * (1.0 - hidden[h] * hidden[h]);
            g[W1 + h * INPUTS] = da * input[0];
            g[W1 + h * INPUTS + 1] = da * input[1];
            g[B1 + h] = da;
        }
        g
    }
}

impl LocalObjective for TinyMlp {
    fn dim(&self) -> usize {
        MLP_DIM
    }

    fn nodes(&self) -> usize {
        self.shards.len()
    }

    fn node_loss(&self, node: usize, x: &[f64]) -> f64 {
        let s = &self.shards[node];
        s.iter().map(|&(p, y)| Self::sample_loss(x, p, y)).sum::<f64>() / s.len() as f64
    }

    fn node_grad(&self, node: usize, x: &[f64]) -> Vec<f64> {
        let s = &self.shards[node];
        let mut g = vec![0.0; MLP_DIM];
        for &(p, y) in s {
            axpy(1.0 / s.len() as f64, &Self::sample_grad(x, p, y), &mut g);
        }
        g
    }

    fn node_stochastic_grad(&self, node: usize, x: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let s = &self.shards[node];
        let mut g = vec![0.0; MLP_DIM];
        for _ in 0..self.batch_size {
            let (p, y) = s[rng.random_range(0..s.len())];
            axpy(1.0 / self.batch_size as f64, &Self::sample_grad(x, p, y), &mut g);
        }
        g
    }

    fn node_noise_variance(&self, node: usize, x: &[f64]) -> f64 {
        let s = &self.shards[node];
        let full = self.node_grad(node, x);
        let single = s.iter().map(|&(p, y)| dist_sq(&Self::sample_grad(x, p, y), &full)).sum::<f64>() / s.len() as f64;
        single / self.batch_size as f64
    }

    fn smoothness(&self) -> Option<f64> {
        None
    }
}
