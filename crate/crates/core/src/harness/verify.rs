use rand::Rng;
use rand_distr::StandardNormal;

use super::ExperimentConfig;
use crate::engine::{csgd_step, dsgd_step, stochastic_gradients, StepContext};
use crate::error::Result;
use crate::oracle::{self, OracleReport};
use crate::problems::{Problem, ProblemKind, ProblemSpec};
use crate::rng::{stream, Stream};
use crate::states::NodeStates;
use crate::topology::{
    build_mixing, eigenvalue_floor_check, estimate_mixing_parameter, period_average, MixingMatrix, MixingParam,
    TopologyKind, TopologySpec,
};

/// Runs the invariant battery and returns one report per check.
pub fn verify(config: &ExperimentConfig) -> Result<Vec<OracleReport>> {
    let seed = config.seeds[0];
    let mut out = Vec::new();
    stochasticity(seed, config.verify.corrupt_mixing, &mut out)?;
    spectra(seed, &mut out)?;
    estimator_bound(seed, &mut out)?;
    gradients(seed, &mut out)?;
    steps(seed, &mut out)?;
    Ok(out)
}

fn fixed(kind: TopologyKind, n: usize) -> Result<MixingMatrix> {
    build_mixing(&TopologySpec::new(kind, n, 0)?, 0, &mut stream(0, Stream::Topology, 0, 0))
}

fn stochasticity(seed: u64, corrupt: bool, out: &mut Vec<OracleReport>) -> Result<()> {
    for kind in TopologyKind::ALL {
        let mut worst = 0.0f64;
        let mut ok = true;
        for n in 2..=16 {
            let spec = TopologySpec::new(kind, n, 0)?;
            for round in 0..10 {
                let w = build_mixing(&spec, round, &mut stream(seed, Stream::Topology, n as u64, round as u64))?;
                worst = worst.max(w.stochasticity_error());
                ok &= w.is_doubly_stochastic();
            }
        }
        let mut r = OracleReport::compare(format!("doubly-stochastic/{kind}"), 0.0, worst, 1e-12);
        r.pass &= ok;
        out.push(r);
    }
    if corrupt {
        let mut m = fixed(TopologyKind::FixedRing, 4)?.weights().clone();
        m[(0, 0)] += 0.01;
        let w = MixingMatrix::new(m, MixingParam::Unknown)?;
        let mut r = OracleReport::compare("doubly-stochastic/corrupted-ring", 0.0, w.stochasticity_error(), 1e-12);
        r.pass &= w.is_doubly_stochastic();
        out.push(r);
    }
    Ok(())
}

fn oracle_p(w: &MixingMatrix) -> Result<f64> {
    let ev = oracle::eig_symmetric(&w.weights().to_rows())?;
    let second = ev.iter().skip(1).map(|v| v.abs()).fold(0.0, f64::max);
    Ok(1.0 - second * second)
}

fn spectra(seed: u64, out: &mut Vec<OracleReport>) -> Result<()> {
    let mut rng = stream(seed, Stream::Estimate, 0, 0);
    for kind in [TopologyKind::FixedRing, TopologyKind::Complete] {
        for n in [4, 8, 16, 32] {
            let w = fixed(kind, n)?;
            let p = w.p().unwrap_or(f64::NAN);
            out.push(OracleReport::compare(format!("spectral-p/{kind}/n{n}"), oracle_p(&w)?, p, 1e-10));
            let rows = w.weights().to_rows();
            let mc = oracle::mc_contraction(n, 100, &mut rng, |_| Ok(rows.clone()))?;
            let mut r = OracleReport::compare(format!("contraction/{kind}/n{n}"), 1.0 - p, mc.factor, 1e-8);
            r.pass &= mc.factor <= 1.0 - p + 1e-10;
            out.push(r);
            out.push(OracleReport::check(format!("eigenvalue-floor/{kind}/n{n}"), eigenvalue_floor_check(&w)?));
        }
    }
    for n in [8, 32] {
        let spec = TopologySpec::new(TopologyKind::RandomMatching, n, 0)?;
        let est = estimate_mixing_parameter(&spec, 1000, &mut rng)?;
        let mc = oracle::mc_contraction(n, 1000, &mut rng, |t| oracle::sample_product(&spec, 1, t, seed))?;
        let tol = 3.0 * (est.std_err + mc.std_err) + 1e-12;
        out.push(OracleReport::compare(
            format!("mixing-estimate/random-matching/n{n}"),
            mc.factor,
            1.0 - est.p_hat,
            tol,
        ));
    }
    Ok(())
}

fn estimator_bound(seed: u64, out: &mut Vec<OracleReport>) -> Result<()> {
    let n = 16;
    let exp_mean = period_average(&TopologySpec::new(TopologyKind::ExponentialOnePeer, n, 0)?)?;
    for (name, w) in [
        ("fixed-ring", fixed(TopologyKind::FixedRing, n)?),
        ("complete", fixed(TopologyKind::Complete, n)?),
        ("exponential-mean", exp_mean),
    ] {
        let p = w.p().unwrap_or(f64::NAN);
        let rows = w.weights().to_rows();
        let mut rng = stream(seed, Stream::Estimate, 1, 0);
        let mut worst = 0.0f64;
        let mut violations = 0;
        for _ in 0..1000 {
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let xi = oracle::xi_sq(&x).sqrt();
            let bound = 2.0 / p * oracle::theta_sq(&x, &rows).sqrt();
            worst = worst.max(xi / bound);
            violations += (xi > bound * (1.0 + 1e-10)) as usize;
        }
        let mut r = OracleReport::check(format!("estimator-bound/{name}"), violations == 0);
        r.main = worst;
        out.push(r);
    }
    Ok(())
}

fn gradients(seed: u64, out: &mut Vec<OracleReport>) -> Result<()> {
    for (kind, tol) in [(ProblemKind::Quadratic, 1e-6), (ProblemKind::Logistic, 1e-6), (ProblemKind::TinyMlp, 1e-5)] {
        let mut spec = ProblemSpec::quadratic(8, 0.0).with_kind(kind);
        spec.heterogeneity = 0.5;
        spec.hessian_heterogeneity = 0.5;
        let problem = Problem::build(&spec, 4)?;
        let mut rng = stream(seed, Stream::Probe, 7, 0);
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let x: Vec<f64> = (0..problem.dim()).map(|_| rng.sample(StandardNormal)).collect();
            for node in 0..problem.n() {
                let g = problem.grad(node, &x)?;
                let fd = oracle::fd_gradient(|y| problem.node_loss(node, y).expect("dimension"), &x, 1e-5)?;
                let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
                let err = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
                worst = worst.max(err);
            }
        }
        out.push(OracleReport::compare(format!("gradient/{}", kind.name()), 0.0, worst, tol));
    }
    Ok(())
}

fn steps(seed: u64, out: &mut Vec<OracleReport>) -> Result<()> {
    let mut spec = ProblemSpec::quadratic(5, 0.0);
    spec.heterogeneity = 1.0;
    spec.hessian_heterogeneity = 0.5;
    let problem = Problem::build(&spec, 4)?;
    let w = fixed(TopologyKind::FixedRing, 4)?;
    let mut rng = stream(seed, Stream::Init, 9, 0);
    let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mut states = NodeStates::from_rows(&rows)?;
    let ctx = StepContext::new(seed, 0);
    let grads = stochastic_gradients(&states, &problem, &ctx)?;
    let expect = oracle::reference_dsgd_step(&rows, &w.weights().to_rows(), &grads, 0.1);
    dsgd_step(&mut states, &problem, &w, 0.1, &ctx)?;
    let err = (0..4)
        .flat_map(|i| states.node(i).iter().zip(&expect[i]).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    out.push(OracleReport::compare("dsgd-step/reference", 0.0, err, 1e-12));

    let mut noisy = spec.clone();
    noisy.noise_scale = 0.5;
    let problem = Problem::build(&noisy, 4)?;
    let complete = fixed(TopologyKind::Complete, 4)?;
    let mut d = NodeStates::identical(4, &rows[0]);
    let mut c = d.clone();
    let mut worst = 0.0f64;
    for t in 0..20 {
        let ctx = StepContext::new(seed, t);
        dsgd_step(&mut d, &problem, &complete, 0.1, &ctx)?;
        csgd_step(&mut c, &problem, 0.1, &ctx)?;
        for i in 0..4 {
            for (a, b) in d.node(i).iter().zip(c.node(i)) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
    }
    out.push(OracleReport::compare("csgd-equivalence/complete", 0.0, worst, 1e-10));

    let mut x = NodeStates::from_rows(&rows)?;
    let mut worst = 0.0f64;
    for t in 0..20 {
        let ctx = StepContext::new(seed, t);
        let before = x.mean();
        let g = stochastic_gradients(&x, &problem, &ctx)?;
        dsgd_step(&mut x, &problem, &w, 0.1, &ctx)?;
        let after = x.mean();
        for k in 0..5 {
            let mean_g = g.iter().map(|gi| gi[k]).sum::<f64>() / 4.0;
            worst = worst.max((after[k] - (before[k] - 0.1 * mean_g)).abs() / before[k].abs().max(1.0));
        }
    }
    out.push(OracleReport::compare("mean-dynamics/fixed-ring", 0.0, worst, 1e-10));
    Ok(())
}
