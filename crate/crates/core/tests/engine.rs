use consensus_sgd::consensus::{ControlMode, ControlPolicy};
use consensus_sgd::engine::{csgd_step, run, stochastic_gradients, LrSchedule, RunConfig, RunSetup, StepContext};
use consensus_sgd::oracle;
use consensus_sgd::problems::{Logistic, Problem, ProblemKind, ProblemSpec, LOGISTIC_L2};
use consensus_sgd::rng::{stream, Stream};
use consensus_sgd::topology::{TopologyKind, TopologySpec};
use consensus_sgd::NodeStates;
use rand::Rng;
use rand_distr::StandardNormal;

fn noisy_spec() -> ProblemSpec {
    let mut spec = ProblemSpec::quadratic(6, 0.5);
    spec.heterogeneity = 1.0;
    spec.hessian_heterogeneity = 0.5;
    spec
}

fn config(spec: ProblemSpec, kind: TopologyKind, policies: Vec<ControlPolicy>, lr: f64, iters: usize) -> RunConfig {
    let topo = TopologySpec::new(kind, 8, 0).unwrap();
    let schedule = LrSchedule::constant(lr, iters).unwrap();
    RunConfig::new(spec, topo, schedule, policies, 11)
}

#[test]
fn all_reduce_run_matches_centralized_steps() {
    let cfg = config(noisy_spec(), TopologyKind::FixedRing, vec![ControlPolicy::all_reduce()], 0.05, 200);
    let trace = run(&cfg).unwrap();
    let setup = RunSetup::new(&cfg).unwrap();
    let mut states = NodeStates::identical(8, &setup.x0);
    for (t, rec) in trace.records.iter().enumerate() {
        csgd_step(&mut states, &setup.problem, 0.05, &StepContext::new(cfg.seed, t)).unwrap();
        let loss = setup.problem.loss(states.node(0)).unwrap();
        assert!(rec.xi_sq <= 1e-24);
        assert!((rec.loss_mean - loss).abs() <= 1e-12 * loss.abs());
    }
}

#[test]
fn zero_target_equals_all_reduce() {
    let zero = ControlPolicy::new(ControlMode::ConstantTarget { factor: 0.0, xi_max: Some(1.0) });
    let a = run(&config(noisy_spec(), TopologyKind::FixedRing, vec![zero], 0.05, 150)).unwrap();
    let b = run(&config(noisy_spec(), TopologyKind::FixedRing, vec![ControlPolicy::all_reduce()], 0.05, 150)).unwrap();
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.loss_mean, y.loss_mean);
        assert!(x.xi_sq <= 1e-24);
    }
}

#[test]
fn runs_are_deterministic_per_seed() {
    for kind in [TopologyKind::RandomMatching, TopologyKind::ExponentialOnePeer] {
        let cfg = config(noisy_spec(), kind, vec![ControlPolicy::uncontrolled()], 0.05, 120);
        assert_eq!(run(&cfg).unwrap().to_csv(), run(&cfg).unwrap().to_csv());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(run(&cfg).unwrap().to_csv(), run(&other).unwrap().to_csv());
    }
}

#[test]
fn noiseless_homogeneous_descent_is_monotone() {
    let spec = ProblemSpec::quadratic(6, 0.0);
    let cfg = config(spec, TopologyKind::Complete, vec![ControlPolicy::uncontrolled()], 0.2, 100);
    let trace = run(&cfg).unwrap();
    for pair in trace.records.windows(2) {
        assert!(pair[1].loss_mean <= pair[0].loss_mean + 1e-15);
    }
}

#[test]
fn noiseless_centralized_step_is_gradient_descent() {
    let mut spec = ProblemSpec::quadratic(5, 0.0);
    spec.heterogeneity = 1.0;
    let problem = Problem::build(&spec, 4).unwrap();
    let mut states = NodeStates::identical(4, &[1.0, -1.0, 0.5, 0.0, 2.0]);
    let mut x = states.node(0).to_vec();
    for t in 0..50 {
        csgd_step(&mut states, &problem, 0.1, &StepContext::new(3, t)).unwrap();
        let g = problem.full_grad(&x).unwrap();
        x.iter_mut().zip(&g).for_each(|(v, g)| *v -= 0.1 * g);
        for (a, b) in states.node(0).iter().zip(&x) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn stochastic_gradients_are_unbiased() {
    let problem = Problem::build(&noisy_spec(), 4).unwrap();
    let states = NodeStates::identical(4, &[0.3; 6]);
    let trials = 4000;
    let mut sum = vec![vec![0.0; 6]; 4];
    let mut sum_sq = vec![vec![0.0; 6]; 4];
    for t in 0..trials {
        for (i, g) in stochastic_gradients(&states, &problem, &StepContext::new(5, t)).unwrap().iter().enumerate() {
            for k in 0..6 {
                sum[i][k] += g[k];
                sum_sq[i][k] += g[k] * g[k];
            }
        }
    }
    let m = trials as f64;
    for i in 0..4 {
        let exact = problem.grad(i, states.node(i)).unwrap();
        for k in 0..6 {
            let mean = sum[i][k] / m;
            let se = ((sum_sq[i][k] / m - mean * mean) / m).sqrt();
            assert!((mean - exact[k]).abs() <= 5.0 * se, "node {i} coord {k}: {mean} vs {}", exact[k]);
        }
    }
}

#[test]
fn logistic_loss_matches_reference() {
    let mut spec = ProblemSpec::quadratic(5, 0.0).with_kind(ProblemKind::Logistic);
    spec.heterogeneity = 0.8;
    spec.samples_per_node = 20;
    spec.data_seed = 4;
    let problem = Problem::build(&spec, 3).unwrap();
    let data = Logistic::synthetic(3, 5, 20, spec.batch_size, 0.8, &mut stream(4, Stream::Data, 0, 0)).unwrap();
    let mut rng = stream(9, Stream::Estimate, 0, 0);
    for _ in 0..20 {
        let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        for (i, shard) in data.shards().iter().enumerate() {
            let reference = oracle::logistic_reference(&shard.features, &shard.labels, LOGISTIC_L2, &x);
            let main = problem.node_loss(i, &x).unwrap();
            assert!((main - reference).abs() <= 1e-12 * (1.0 + reference.abs()));
        }
    }
}

#[test]
fn measured_smoothness_respects_constant() {
    for kind in [ProblemKind::Quadratic, ProblemKind::Logistic] {
        let mut spec = noisy_spec().with_kind(kind);
        spec.dim = 4;
        let problem = Problem::build(&spec, 4).unwrap();
        let x0 = problem.initial_point(0);
        let constants = problem.constants(&problem.probe_points(&x0, 0)).unwrap();
        let mut rng = stream(2, Stream::Estimate, 0, 0);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let d: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let l = problem.estimate_smoothness(&x, &d, 0.1).unwrap();
            assert!(l <= constants.l + 1e-9, "{kind:?}: {l} > {}", constants.l);
        }
    }
}
