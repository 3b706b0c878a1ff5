//! Brute-force reference implementations.
//!
//! Nothing here calls into the numerical code of the other modules: matrices
//! are plain `Vec<Vec<f64>>` and every quantity is recomputed with scalar
//! loops. Only the topology builders are used, to sample the matrices whose
//! behavior is being measured.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream, SimRng, Stream};
use crate::topology::{build_mixing, TopologySpec};

pub type Dense = Vec<Vec<f64>>;

/// One oracle-vs-main comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub oracle: f64,
    pub main: f64,
    /// `|oracle - main| / max(|oracle|, 1)`: relative for large values,
    /// absolute near zero.
    pub rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn compare(name: impl Into<String>, oracle: f64, main: f64, tolerance: f64) -> Self {
        let rel_err = (oracle - main).abs() / oracle.abs().max(1.0);
        Self { name: name.into(), oracle, main, rel_err, tolerance, pass: rel_err <= tolerance }
    }

    /// A check with no numeric comparison.
    pub fn check(name: impl Into<String>, pass: bool) -> Self {
        let v = if pass { 0.0 } else { 1.0 };
        Self { name: name.into(), oracle: 0.0, main: v, rel_err: v, tolerance: 0.0, pass }
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} oracle={:.6e} main={:.6e} rel_err={:.3e} tol={:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.oracle,
            self.main,
            self.rel_err,
            self.tolerance
        )
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending. Sweeps until the off-diagonal Frobenius norm is below 1e-12
/// (relative to the matrix norm when that exceeds 1).
pub fn eig_symmetric(m: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = m.len();
    let mut a: Dense = m.to_vec();
    let mut scale = 0.0f64;
    for (i, row) in a.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: row.len() });
        }
        for j in 0..n {
            scale = scale.max(row[j].abs());
            if (row[j] - m[j][i]).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::UnsupportedMatrix(format!("not symmetric at ({i}, {j})")));
            }
        }
    }
    let off = |a: &Dense| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s.sqrt()
    };
    let tol = 1e-12 * scale.max(1.0);
    for _sweep in 0..100 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    if off(&a) > tol {
        return Err(Error::UnsupportedMatrix("Jacobi iteration did not converge".into()));
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    Ok(ev)
}

/// `A B` with scalar loops.
pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..k {
            for j in 0..m {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

/// `(1/n) sum_i ||x_bar - x_i||^2` for `x` given as rows.
pub fn xi_sq(x: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let d = x[0].len();
    let mut total = 0.0;
    for k in 0..d {
        let mut mean = 0.0;
        for row in x {
            mean += row[k];
        }
        mean /= n as f64;
        for row in x {
            total += (row[k] - mean) * (row[k] - mean);
        }
    }
    total / n as f64
}

/// `(1/n) sum_i ||sum_j w_ij x_j - x_i||^2`.
pub fn theta_sq(x: &[Vec<f64>], w: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        for k in 0..x[i].len() {
            let mut mixed = 0.0;
            for j in 0..n {
                mixed += w[i][j] * x[j][k];
            }
            total += (mixed - x[i][k]) * (mixed - x[i][k]);
        }
    }
    total / n as f64
}

/// Ratio `||W x - x_bar||^2 / ||x - x_bar||^2` for a scalar per node.
fn ratio(w: &[Vec<f64>], v: &[f64]) -> f64 {
    let n = v.len();
    let mean: f64 = v.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let mut wi = 0.0;
        for j in 0..n {
            wi += w[i][j] * v[j];
        }
        num += (wi - mean) * (wi - mean);
        den += (v[i] - mean) * (v[i] - mean);
    }
    num / den
}

/// Measured contraction factor with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McContraction {
    pub factor: f64,
    pub std_err: f64,
    pub trials: usize,
}

/// Empirical `1 - p`: the largest mean contraction ratio over candidate
/// directions.
///
/// Three disjoint sets of `trials` samples are drawn. The first gives the
/// sample mean of `W^T W`, whose top eigenvector on the mean-zero subspace
/// (by power iteration) joins 16 random mean-zero directions as candidates.
/// The second picks the candidate with the largest mean ratio, and the third
/// scores it. No direction is scored on the samples used to choose it.
pub fn mc_contraction(
    n: usize,
    trials: usize,
    rng: &mut SimRng,
    mut sample: impl FnMut(usize) -> Result<Dense>,
) -> Result<McContraction> {
    if trials < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 trials, got {trials}")));
    }
    let mut gram = vec![vec![0.0; n]; n];
    for t in 0..trials {
        let w = sample(t)?;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += w[k][i] * w[k][j];
                }
                gram[i][j] += s / trials as f64;
            }
        }
    }
    let center = |v: &mut Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
    };
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    for _ in 0..2000 {
        center(&mut v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[i] += gram[i][j] * v[j];
            }
        }
        v = next;
    }
    center(&mut v);
    if v.iter().any(|x| *x != 0.0) {
        candidates.push(v);
    }
    for _ in 0..16 {
        let mut c: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        center(&mut c);
        candidates.push(c);
    }
    let mut selection = vec![0.0; candidates.len()];
    for t in 0..trials {
        let w = sample(trials + t)?;
        for (c, s) in candidates.iter().zip(selection.iter_mut()) {
            *s += ratio(&w, c);
        }
    }
    let best =
        (0..candidates.len()).max_by(|&a, &b| selection[a].total_cmp(&selection[b])).expect("at least one candidate");
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for t in 0..trials {
        let r = ratio(&sample(2 * trials + t)?, &candidates[best]);
        sum += r;
        sum_sq += r * r;
    }
    let m = trials as f64;
    let factor = sum / m;
    let var = (sum_sq / m - factor * factor).max(0.0) * m / (m - 1.0);
    Ok(McContraction { factor, std_err: (var / m).sqrt(), trials })
}

/// Dense weights of `k` consecutive rounds of `spec` starting at a round
/// derived from `index`, multiplied with scalar loops (first round applied
/// first).
pub fn sample_product(spec: &TopologySpec, k: usize, index: usize, seed: u64) -> Result<Dense> {
    let n = spec.n;
    let mut acc: Dense = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let period = spec.period().max(1);
    let mut pick = stream(seed, Stream::Estimate, index as u64, 0);
    let start = pick.random_range(0..period);
    for r in 0..k {
        let round = start + r;
        let mut rng = stream(seed, Stream::Topology, index as u64, r as u64 + 1);
        let w = build_mixing(spec, round, &mut rng)?.weights().to_rows();
        acc = matmul(&w, &acc);
    }
    Ok(acc)
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let mut y = x.to_vec();
    Ok((0..x.len())
        .map(|k| {
            y[k] = x[k] + step;
            let up = f(&y);
            y[k] = x[k] - step;
            let down = f(&y);
            y[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect())
}

/// `x_i <- sum_j w_ij (x_j - lr g_j)` as a triple loop.
pub fn reference_dsgd_step(x: &[Vec<f64>], w: &[Vec<f64>], grads: &[Vec<f64>], lr: f64) -> Dense {
    let n = x.len();
    let d = x[0].len();
    let mut out = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..d {
                out[i][k] += w[i][j] * (x[j][k] - lr * grads[j][k]);
            }
        }
    }
    out
}

/// `1/2 ||A x - b||^2` and its gradient `A^T (A x - b)`.
pub fn quadratic_reference(a: &[Vec<f64>], b: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
    let r: Vec<f64> =
        a.iter().zip(b).map(|(row, bi)| row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - bi).collect();
    let mut g = vec![0.0; x.len()];
    for (row, ri) in a.iter().zip(&r) {
        for k in 0..x.len() {
            g[k] += row[k] * ri;
        }
    }
    (0.5 * r.iter().map(|v| v * v).sum::<f64>(), g)
}

/// Mean of `ln(1 + exp(-y z.x))` plus `l2/2 ||x||^2`.
pub fn logistic_reference(features: &[Vec<f64>], labels: &[f64], l2: f64, x: &[f64]) -> f64 {
    let mut total = 0.0;
    for (z, y) in features.iter().zip(labels) {
        let mut m = 0.0;
        for k in 0..x.len() {
            m += z[k] * x[k];
        }
        let t = -y * m;
        total += t.max(0.0) + (-t.abs()).exp().ln_1p();
    }
    let mut sq = 0.0;
    for v in x {
        sq += v * v;
    }
    total / labels.len() as f64 + 0.5 * l2 * sq
}
