//! Communication topologies and their mixing matrices.
//!
//! Five families are supported: the complete graph, the fixed ring, the one-peer
//! exponential graph, the bipartite exponential graph and random matchings. All
//! builders produce symmetric doubly stochastic matrices with uniform weights:
//! `1/n` everywhere for the complete graph, `1/3` on self and both neighbors for
//! the ring, and `1/2`-`1/2` for every paired scheme (a node left without a
//! partner in some round keeps weight 1 on itself).

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Tolerance on row/column sums for a matrix to count as doubly stochastic.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Complete,
    #[serde(alias = "ring")]
    FixedRing,
    #[serde(alias = "exponential")]
    ExponentialOnePeer,
    #[serde(alias = "bipartite")]
    BipartiteExponential,
    #[serde(alias = "matching")]
    RandomMatching,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 5] = [
        TopologyKind::Complete,
        TopologyKind::FixedRing,
        TopologyKind::ExponentialOnePeer,
        TopologyKind::BipartiteExponential,
        TopologyKind::RandomMatching,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Complete => "complete",
            TopologyKind::FixedRing => "fixed-ring",
            TopologyKind::ExponentialOnePeer => "exponential-one-peer",
            TopologyKind::BipartiteExponential => "bipartite-exponential",
            TopologyKind::RandomMatching => "random-matching",
        }
    }
}

impl std::fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TopologySpec {
    pub fn new(kind: TopologyKind, n: usize, seed: u64) -> Result<Self> {
        let spec = Self { kind, n, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("topology needs n >= 2 nodes, got {}", self.n)));
        }
        Ok(())
    }

    /// Complete and ring matrices do not change between rounds.
    pub fn is_fixed(&self) -> bool {
        matches!(self.kind, TopologyKind::Complete | TopologyKind::FixedRing)
    }

    /// Length of the peer cycle for the exponential schemes: `floor(log2(n-1)) + 1`.
    /// Fixed topologies have period 1; random matchings have none (0).
    pub fn period(&self) -> usize {
        match self.kind {
            TopologyKind::Complete | TopologyKind::FixedRing => 1,
            TopologyKind::RandomMatching => 0,
            TopologyKind::ExponentialOnePeer | TopologyKind::BipartiteExponential => exponential_period(self.n),
        }
    }

    /// Rank offsets cycled through by the exponential schemes.
    ///
    /// One-peer exponential: `2^0, 2^1, ..., 2^m`. Bipartite: odd ranks reach
    /// even ranks at odd offsets `2^1 - 1, 2^2 - 1, ..., 2^(m+1) - 1`.
    pub fn peer_offsets(&self) -> Vec<usize> {
        let m = exponential_period(self.n);
        match self.kind {
            TopologyKind::ExponentialOnePeer => (0..m).map(|k| 1usize << k).collect(),
            TopologyKind::BipartiteExponential => (0..m).map(|k| (1usize << (k + 1)) - 1).collect(),
            _ => Vec::new(),
        }
    }
}

fn exponential_period(n: usize) -> usize {
    // floor(log2(n - 1)) + 1, with n = 2 giving 1
    let v = (n - 1).max(1);
    (usize::BITS - v.leading_zeros()) as usize
}

/// How the mixing parameter of a matrix is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixingParam {
    /// From the spectrum of a fixed symmetric matrix.
    Exact(f64),
    /// Monte-Carlo estimate for a randomized family.
    Estimated(MixingEstimate),
    /// A guaranteed lower bound, e.g. from composing gossip rounds.
    AtLeast(f64),
    Unknown,
}

impl MixingParam {
    /// The value usable in theory checks: exact value, conservative lower
    /// confidence bound, or proven lower bound.
    pub fn value(&self) -> Option<f64> {
        match self {
            MixingParam::Exact(p) | MixingParam::AtLeast(p) => Some(*p),
            MixingParam::Estimated(e) => Some(e.lower),
            MixingParam::Unknown => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixingMatrix {
    weights: Matrix,
    param: MixingParam,
}

impl MixingMatrix {
    pub fn new(weights: Matrix, param: MixingParam) -> Result<Self> {
        if !weights.is_square() {
            return Err(Error::DimensionMismatch { expected: weights.rows(), got: weights.cols() });
        }
        Ok(Self { weights, param })
    }

    /// Wraps a matrix and computes its exact parameter from the spectrum.
    pub fn fixed(weights: Matrix) -> Result<Self> {
        let mut m = Self::new(weights, MixingParam::Unknown)?;
        m.param = MixingParam::Exact(spectral_gap(&m)?.p);
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn param(&self) -> MixingParam {
        self.param
    }

    pub fn p(&self) -> Option<f64> {
        self.param.value()
    }

    pub fn with_param(mut self, param: MixingParam) -> Self {
        self.param = param;
        self
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn stochasticity_error(&self) -> f64 {
        self.weights.row_sums().into_iter().chain(self.weights.col_sums()).map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn is_doubly_stochastic(&self) -> bool {
        let nonneg = self.weights.as_slice().iter().all(|&w| (0.0..=1.0).contains(&w));
        nonneg && self.stochasticity_error() <= STOCHASTIC_TOL
    }

    /// Maximum number of distinct peers any node exchanges with this round.
    pub fn degree(&self) -> usize {
        let n = self.n();
        (0..n).map(|i| (0..n).filter(|&j| j != i && self.weights[(i, j)] != 0.0).count()).max().unwrap_or(0)
    }

    /// One gossip step on node states stored as rows: `x_i <- sum_j w_ij x_j`.
    pub fn apply(&self, states: &Matrix) -> Result<Matrix> {
        self.weights.matmul(states)
    }

    /// `||W Y - mean||^2 / ||Y - mean||^2` for states `Y` stored as rows.
    pub fn contraction_ratio(&self, states: &Matrix) -> Result<f64> {
        let before = deviation_sq(states);
        if before == 0.0 {
            return Ok(0.0);
        }
        let after = deviation_sq(&self.apply(states)?);
        Ok(after / before)
    }

    /// Row-major CSV, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            let row: Vec<String> = self.weights.row(i).iter().map(|w| format!("{w:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// `sum_i ||x_i - mean||^2` for states stored as rows.
pub(crate) fn deviation_sq(states: &Matrix) -> f64 {
    let n = states.rows();
    let d = states.cols();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(states.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    (0..n).map(|i| crate::linalg::dist_sq(states.row(i), &mean)).sum()
}

fn pairing_matrix(n: usize, partner: &[Option<usize>]) -> Matrix {
    let mut w = Matrix::zeros(n, n);
    for (i, p) in partner.iter().enumerate() {
        match p {
            Some(j) => {
                w[(i, i)] = 0.5;
                w[(i, *j)] = 0.5;
            }
            None => w[(i, i)] = 1.0,
        }
    }
    w
}

fn exponential_pairs(n: usize, offset: usize) -> Vec<Option<usize>> {
    // Nodes in the lower half of each 2*offset block pair with the node `offset`
    // ranks above; pairs running past the last rank stay unmatched.
    (0..n)
        .map(|i| if i % (2 * offset) < offset { (i + offset < n).then_some(i + offset) } else { Some(i - offset) })
        .collect()
}

fn bipartite_pairs(n: usize, offset: usize) -> Vec<Option<usize>> {
    let mut partner = vec![None; n];
    for i in (1..n).step_by(2) {
        let j = (i + offset) % n;
        if j.is_multiple_of(2) && partner[j].is_none() {
            partner[i] = Some(j);
            partner[j] = Some(i);
        }
    }
    partner
}

fn random_pairs<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut partner = vec![None; n];
    for pair in order.chunks_exact(2) {
        partner[pair[0]] = Some(pair[1]);
        partner[pair[1]] = Some(pair[0]);
    }
    partner
}

fn round_weights<R: Rng + ?Sized>(spec: &TopologySpec, round: usize, rng: &mut R) -> Matrix {
    let n = spec.n;
    match spec.kind {
        TopologyKind::Complete => Matrix::from_fn(n, n, |_, _| 1.0 / n as f64),
        TopologyKind::FixedRing => {
            let mut w = Matrix::zeros(n, n);
            for i in 0..n {
                // n = 2 collapses both neighbors onto the same node
                for j in [(i + n - 1) % n, i, (i + 1) % n] {
                    w[(i, j)] += 1.0 / 3.0;
                }
            }
            w
        }
        TopologyKind::ExponentialOnePeer => {
            let offsets = spec.peer_offsets();
            pairing_matrix(n, &exponential_pairs(n, offsets[round % offsets.len()]))
        }
        TopologyKind::BipartiteExponential => {
            let offsets = spec.peer_offsets();
            pairing_matrix(n, &bipartite_pairs(n, offsets[round % offsets.len()]))
        }
        TopologyKind::RandomMatching => pairing_matrix(n, &random_pairs(n, rng)),
    }
}

/// Mixing matrix used in `round`. Fixed topologies ignore `round` and `rng`
/// and carry their exact parameter; randomized rounds carry `Unknown` because
/// the parameter belongs to the family (see [`estimate_mixing_parameter`]).
pub fn build_mixing<R: Rng + ?Sized>(spec: &TopologySpec, round: usize, rng: &mut R) -> Result<MixingMatrix> {
    spec.validate()?;
    let weights = round_weights(spec, round, rng);
    if spec.is_fixed() {
        MixingMatrix::fixed(weights)
    } else {
        MixingMatrix::new(weights, MixingParam::Unknown)
    }
}

/// Mean of the rounds in one period of a deterministic time-varying topology,
/// returned as a fixed matrix with its exact parameter.
pub fn period_average(spec: &TopologySpec) -> Result<MixingMatrix> {
    spec.validate()?;
    if matches!(spec.kind, TopologyKind::RandomMatching) {
        return Err(Error::InvalidArgument("random matching has no deterministic period".into()));
    }
    let k = spec.period();
    let mut acc = Matrix::zeros(spec.n, spec.n);
    let mut rng = crate::rng::stream(spec.seed, crate::rng::Stream::Topology, 0, 0);
    for round in 0..k {
        acc.add_assign(&round_weights(spec, round, &mut rng));
    }
    acc.scale(1.0 / k as f64);
    MixingMatrix::fixed(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGap {
    pub rho: f64,
    pub p: f64,
}

/// Spectral gap `rho = 1 - max_{i>=2} |lambda_i|` and `p = 1 - (1 - rho)^2`.
pub fn spectral_gap(w: &MixingMatrix) -> Result<SpectralGap> {
    let ev = w.weights.symmetric_eigenvalues()?;
    let second = ev[1].abs().max(ev[ev.len() - 1].abs());
    let rho = (1.0 - second).clamp(0.0, 1.0);
    Ok(SpectralGap { rho, p: 1.0 - (1.0 - rho) * (1.0 - rho) })
}

/// Monte-Carlo estimate of the mixing parameter of a (possibly randomized) family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingEstimate {
    /// Point estimate.
    pub p_hat: f64,
    /// Conservative lower bound, `p_hat - 3 * std_err`, floored at 0.
    pub lower: f64,
    pub std_err: f64,
    pub trials: usize,
}

impl MixingEstimate {
    pub fn ci(&self) -> (f64, f64) {
        (self.lower, (self.p_hat + 3.0 * self.std_err).min(1.0))
    }
}

/// Estimate of the worst-case expected contraction `1 - p` of a random matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionEstimate {
    pub factor: f64,
    pub std_err: f64,
    pub trials: usize,
}

/// Worst-case expected contraction of sampled matrices.
///
/// For states `Y` with zero mean, `E ||W Y||^2 = tr(Y^T E[W^T W] Y)`, so the
/// worst direction is the top eigenvector of `E[W^T W]` on the mean-zero
/// subspace. It is located from the sample mean of `W^T W` over `trials`
/// draws, and the reported factor is the mean ratio along it over `trials`
/// further draws. Scoring on fresh draws avoids the upward bias of a sample
/// top eigenvalue, which is large when the spectrum is degenerate (random
/// matchings).
pub fn estimate_contraction<R, F>(n: usize, trials: usize, rng: &mut R, mut sample: F) -> Result<ContractionEstimate>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Result<Matrix>,
{
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least 2 trials".into()));
    }
    let mut draw = |rng: &mut R| -> Result<Matrix> {
        let w = sample(rng)?;
        if w.rows() != n || w.cols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: w.rows() });
        }
        Ok(w)
    };
    let mut gram = Matrix::zeros(n, n);
    for _ in 0..trials {
        let w = draw(rng)?;
        gram.add_assign(&w.transpose().matmul(&w)?);
    }
    gram.scale(1.0 / trials as f64);
    // Remove the consensus direction: W^T W 1 = 1 for doubly stochastic W.
    let sym = Matrix::from_fn(n, n, |i, j| 0.5 * (gram[(i, j)] + gram[(j, i)]) - 1.0 / n as f64);
    let (_, v) = sym.top_eigenpair()?;
    let v_mean = v.iter().sum::<f64>() / n as f64;
    let v: Vec<f64> = v.iter().map(|x| x - v_mean).collect();
    let v_norm = dot(&v, &v);
    let mut ratios = Vec::with_capacity(trials);
    for _ in 0..trials {
        let w = draw(rng)?;
        let wv: Vec<f64> = (0..n).map(|i| dot(w.row(i), &v)).collect();
        let mean = wv.iter().sum::<f64>() / n as f64;
        let r = wv.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        ratios.push(if v_norm > 0.0 { r / v_norm } else { 0.0 });
    }
    let mean = ratios.iter().sum::<f64>() / trials as f64;
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (trials - 1) as f64;
    let factor = if mean.abs() < 1e-14 { 0.0 } else { mean };
    Ok(ContractionEstimate { factor, std_err: (var / trials as f64).sqrt(), trials })
}

/// Estimate `p` for a topology family by sampling rounds.
///
/// Periodic schedules sample a uniform round of the cycle; random matchings
/// draw fresh matchings.
pub fn estimate_mixing_parameter<R: Rng + ?Sized>(
    spec: &TopologySpec,
    trials: usize,
    rng: &mut R,
) -> Result<MixingEstimate> {
    if trials < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 trials, got {trials}")));
    }
    spec.validate()?;
    let period = spec.period().max(1);
    let est = estimate_contraction(spec.n, trials, rng, |r| {
        let round = r.random_range(0..period);
        Ok(round_weights(spec, round, r))
    })?;
    let p_hat = (1.0 - est.factor).clamp(0.0, 1.0);
    Ok(MixingEstimate { p_hat, lower: (p_hat - 3.0 * est.std_err).max(0.0), std_err: est.std_err, trials })
}

/// `1 - (1 - p)^k`: the parameter guaranteed after `k` gossip rounds.
pub fn repeated_gossip_bound(p: f64, k: usize) -> f64 {
    1.0 - (1.0 - p).powi(k as i32)
}

/// Product `W_k ... W_1` of the given rounds (first element applied first).
/// The result carries the lower bound `1 - prod(1 - p_i)` when every factor
/// has a known parameter.
pub fn compose_gossip(matrices: &[MixingMatrix]) -> Result<MixingMatrix> {
    let first =
        matrices.first().ok_or_else(|| Error::InvalidArgument("compose_gossip needs at least one matrix".into()))?;
    let n = first.n();
    let mut product = first.weights.clone();
    for m in &matrices[1..] {
        if m.n() != n {
            return Err(Error::DimensionMismatch { expected: n, got: m.n() });
        }
        product = m.weights.matmul(&product)?;
    }
    let param = matrices
        .iter()
        .map(|m| m.p())
        .try_fold(1.0, |acc, p| p.map(|p| acc * (1.0 - p)))
        .map_or(MixingParam::Unknown, |rest| MixingParam::AtLeast(1.0 - rest));
    MixingMatrix::new(product, param)
}

/// Smallest eigenvalue (by absolute value) of `W - 11^T/n - I`.
pub fn eigenvalue_floor(w: &MixingMatrix) -> Result<f64> {
    let n = w.n();
    let shifted = Matrix::from_fn(n, n, |i, j| w.weights[(i, j)] - 1.0 / n as f64 - if i == j { 1.0 } else { 0.0 });
    let ev = shifted.symmetric_eigenvalues()?;
    Ok(ev.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min))
}

/// True iff `lambda_min(W - 11^T/n - I) >= p/2` for the matrix's recorded `p`.
pub fn eigenvalue_floor_check(w: &MixingMatrix) -> Result<bool> {
    let p = w.p().ok_or_else(|| Error::InvalidArgument("eigenvalue floor check needs a known p".into()))?;
    Ok(eigenvalue_floor(w)? >= p / 2.0 - 1e-12)
}
