use std::fmt::Write as _;

use super::ExperimentConfig;
use crate::error::Result;
use crate::rng::{stream, Stream};
use crate::topology::{build_mixing, estimate_mixing_parameter, spectral_gap, TopologyKind, TopologySpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRow {
    pub topology: TopologyKind,
    pub n: usize,
    /// `1 - max_{i>=2} |lambda_i|`, fixed topologies only.
    pub rho: Option<f64>,
    /// Exact for fixed topologies, Monte-Carlo point estimate otherwise.
    pub p: f64,
    pub p_lower: f64,
    pub p_upper: f64,
    /// Largest number of neighbors (self excluded) in one sampled round.
    pub degree: usize,
}

pub fn spectral_row(kind: TopologyKind, n: usize, trials: usize, seed: u64) -> Result<SpectralRow> {
    let spec = TopologySpec::new(kind, n, 0)?;
    let sampled = build_mixing(&spec, 0, &mut stream(seed, Stream::Topology, 0, 0))?;
    let degree = sampled.degree();
    if spec.is_fixed() {
        let gap = spectral_gap(&sampled)?;
        return Ok(SpectralRow {
            topology: kind,
            n,
            rho: Some(gap.rho),
            p: gap.p,
            p_lower: gap.p,
            p_upper: gap.p,
            degree,
        });
    }
    let est = estimate_mixing_parameter(&spec, trials, &mut stream(seed, Stream::Estimate, n as u64, kind as u64))?;
    let (lo, hi) = est.ci();
    Ok(SpectralRow { topology: kind, n, rho: None, p: est.p_hat, p_lower: lo, p_upper: hi, degree })
}

pub fn spectral_table(config: &ExperimentConfig) -> Result<Vec<SpectralRow>> {
    let s = &config.spectral;
    let mut rows = Vec::new();
    for &n in &s.sizes {
        for &kind in &s.topologies {
            rows.push(spectral_row(kind, n, s.trials, config.seeds[0])?);
        }
    }
    Ok(rows)
}

/// `topology,n,rho,p,p_lower,p_upper,degree,config_hash`; `rho` is empty
/// for randomized topologies.
pub fn spectral_csv(rows: &[SpectralRow], hash: &str) -> String {
    let mut out = String::from("topology,n,rho,p,p_lower,p_upper,degree,config_hash\n");
    for r in rows {
        let rho = r.rho.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{rho},{},{},{},{},{hash}", r.topology, r.n, r.p, r.p_lower, r.p_upper, r.degree);
    }
    out
}
