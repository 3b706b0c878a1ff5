use rand::Rng;
use rand_distr::StandardNormal;

use super::LocalObjective;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm_sq, orthonormalize, Matrix};
use crate::rng::SimRng;

/// `f_i(x) = 1/2 ||A_i x - b_i||^2` with additive Gaussian gradient noise of
/// total variance `noise_scale^2` (per coordinate `noise_scale^2 / d`).
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: Vec<Matrix>,
    b: Vec<Vec<f64>>,
    noise_scale: f64,
    smoothness: f64,
}

impl Quadratic {
    pub fn new(a: Vec<Matrix>, b: Vec<Vec<f64>>, noise_scale: f64) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::InvalidArgument("need one (A_i, b_i) pair per node".into()));
        }
        let d = a[0].cols();
        let mut smoothness = 0.0f64;
        for (ai, bi) in a.iter().zip(&b) {
            if ai.cols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: ai.cols() });
            }
            if ai.rows() != bi.len() {
                return Err(Error::DimensionMismatch { expected: ai.rows(), got: bi.len() });
            }
            let hess = ai.transpose().matmul(ai)?;
            smoothness = smoothness.max(hess.symmetric_eigenvalues()?[0]);
        }
        if noise_scale < 0.0 {
            return Err(Error::InvalidArgument("noise_scale must be >= 0".into()));
        }
        Ok(Self { a, b, noise_scale, smoothness })
    }

    /// Synthetic instance. Every node shares the curvature spectrum (log-spaced
    /// over `curvature`); `hessian_heterogeneity` blends a shared eigenbasis
    /// with per-node bases and `heterogeneity` shifts the node targets along
    /// fixed unit vectors.
    pub fn synthetic(
        n: usize,
        dim: usize,
        curvature: [f64; 2],
        noise_scale: f64,
        heterogeneity: f64,
        hessian_heterogeneity: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("quadratic dimension must be positive".into()));
        }
        let [lo, hi] = curvature;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("invalid curvature range [{lo}, {hi}]")));
        }
        let spectrum: Vec<f64> =
            (0..dim).map(|k| if dim == 1 { hi } else { lo * (hi / lo).powf(k as f64 / (dim - 1) as f64) }).collect();
        let gaussian = |rng: &mut SimRng| Matrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let shared = gaussian(rng);
        let x_star: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            let own = gaussian(rng);
            let blend = Matrix::from_fn(dim, dim, |i, j| shared[(i, j)] + hessian_heterogeneity * own[(i, j)]);
            let basis = orthonormalize(&blend);
            // A_i = diag(sqrt(h)) U_i^T, so A_i^T A_i = U_i diag(h) U_i^T
            let ai = Matrix::from_fn(dim, dim, |i, j| spectrum[i].sqrt() * basis[(j, i)]);
            let mut shift: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = norm_sq(&shift).sqrt();
            shift.iter_mut().for_each(|v| *v *= heterogeneity / norm);
            let mut bi: Vec<f64> = (0..dim).map(|i| dot(ai.row(i), &x_star)).collect();
            axpy(1.0, &shift, &mut bi);
            a.push(ai);
            b.push(bi);
        }
        Self::new(a, b, noise_scale)
    }

    fn residual(&self, node: usize, x: &[f64]) -> Vec<f64> {
        let ai = &self.a[node];
        (0..ai.rows()).map(|r| dot(ai.row(r), x) - self.b[node][r]).collect()
    }
}

impl LocalObjective for Quadratic {
    fn dim(&self) -> usize {
        self.a[0].cols()
    }

    fn nodes(&self) -> usize {
        self.a.len()
    }

    fn node_loss(&self, node: usize, x: &[f64]) -> f64 {
        0.5 * norm_sq(&self.residual(node, x))
    }

    fn node_grad(&self, node: usize, x: &[f64]) -> Vec<f64> {
        let r = self.residual(node, x);
        let ai = &self.a[node];
        let mut g = vec![0.0; ai.cols()];
        for (row, ri) in r.iter().enumerate() {
            axpy(*ri, ai.row(row), &mut g);
        }
        g
    }

    fn node_stochastic_grad(&self, node: usize, x: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let mut g = self.node_grad(node, x);
        if self.noise_scale > 0.0 {
            let sd = self.noise_scale / (g.len() as f64).sqrt();
            for gi in &mut g {
                *gi += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        g
    }

    fn node_noise_variance(&self, _node: usize, _x: &[f64]) -> f64 {
        self.noise_scale * self.noise_scale
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }
}
