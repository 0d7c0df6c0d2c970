mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wlra_core::model::*;
use wlra_core::solvers::*;
use wlra_core::step_policy::{adaptive_a_b, adaptive_a_b_tilde, phi_min, rho0, IterateRef};
use wlra_core::stiefel::retract_scaled;
use wlra_core::svd::{fill_missing_column_mean, truncated_svd_init};
use wlra_core::{FactorPair, PolicyKind, ProductPoint, StepPolicy, WlraError};

fn svd_start(d: &ProblemData) -> (ProductPoint, FactorPair) {
    truncated_svd_init(&fill_missing_column_mean(d), d.k()).unwrap()
}

fn config(kind: PolicyKind, d: &ProblemData, init_sq: f64, lambda: f64, iters: u64) -> SolverConfig {
    let pol = StepPolicy::new(kind, d, init_sq, lambda, 1.0).unwrap();
    let mut c = SolverConfig::new(pol, Budget::Iterations(iters), 77);
    c.trace_every = 1;
    c.clock = ClockMode::Frozen;
    c
}

#[test]
fn first_sgd_steps_match_direct_composition() {
    let d = completion_instance(1, 12, 8, 2, 2, 0.5);
    let (p0, f0) = svd_start(&d);
    let reg = Regularization::new(0.01).unwrap();
    let first_sample = || Sampler::new(&d).unwrap().sample(&mut ChaCha8Rng::seed_from_u64(77));

    let c = config(PolicyKind::ManifoldRegularized, &d, p0.rho(), 0.01, 1);
    let (p1, _) = sgd_manifold(&p0, &d, &c).unwrap();
    let g = stoch_grad_manifold(&p0, first_sample(), &d, reg).unwrap();
    assert_eq!(p1, retract_scaled(&p0, &g, -1.0 / c.policy.phi_min()).unwrap());

    let c = config(PolicyKind::EuclideanRegularized, &d, rho_euclidean(&f0), 0.01, 1);
    let (f1, _) = sgd_euclidean(&f0, &d, &c).unwrap();
    let g = stoch_grad_euclidean(&f0, first_sample(), &d, reg).unwrap();
    assert_eq!(f1, f0.add_scaled(&g, -1.0 / c.policy.phi_min()));

    let full = completion_instance(2, 6, 5, 2, 2, 1.0);
    let (q0, _) = svd_start(&full);
    let w0 = full.require_positive_weights().unwrap();
    let c = config(PolicyKind::ManifoldPositiveWeights, &full, q0.rho(), w0 / 2.0, 1);
    let (q1, _) = sgd_pw(&q0, &full, &c).unwrap();
    let s = Sampler::new(&full).unwrap().sample(&mut ChaCha8Rng::seed_from_u64(77));
    let g = stoch_grad_pw(&q0, s, &full, Regularization::new(w0 / 2.0).unwrap()).unwrap();
    assert_eq!(q1, retract_scaled(&q0, &g, -1.0 / c.policy.phi_min()).unwrap());
}

#[test]
fn sgd_is_deterministic_per_seed() {
    let d = completion_instance(3, 15, 10, 2, 2, 0.5);
    let (p0, f0) = svd_start(&d);
    let c = config(PolicyKind::ManifoldRegularized, &d, p0.rho(), 0.01, 300);
    assert_eq!(sgd_manifold(&p0, &d, &c).unwrap(), sgd_manifold(&p0, &d, &c).unwrap());
    let c = config(PolicyKind::EuclideanRegularized, &d, rho_euclidean(&f0), 0.01, 300);
    assert_eq!(sgd_euclidean(&f0, &d, &c).unwrap(), sgd_euclidean(&f0, &d, &c).unwrap());
    let mut other = c.clone();
    other.seed += 1;
    assert_ne!(sgd_euclidean(&f0, &d, &c).unwrap().1, sgd_euclidean(&f0, &d, &other).unwrap().1);
}

#[test]
fn iteration_budget_and_trace_layout() {
    let d = completion_instance(4, 10, 6, 2, 2, 0.6);
    let (p0, _) = svd_start(&d);
    let mut c = config(PolicyKind::ManifoldRegularized, &d, p0.rho(), 0.01, 1000);
    c.trace_every = 10;
    let (_, tr) = sgd_manifold(&p0, &d, &c).unwrap();
    assert_eq!(tr.len(), 101);
    assert_eq!(tr.last().unwrap().t, 1000);
    c.budget = Budget::Iterations(25);
    let (_, tr) = sgd_manifold(&p0, &d, &c).unwrap();
    let ts: Vec<u64> = tr.records.iter().map(|r| r.t).collect();
    assert_eq!(ts, vec![0, 10, 20, 25]);
    c.budget = Budget::Iterations(0);
    let (p, tr) = sgd_manifold(&p0, &d, &c).unwrap();
    assert_eq!((p, tr.len()), (p0, 1));
}

#[test]
fn time_budget_stops_at_first_late_trace_point() {
    let d = completion_instance(5, 10, 6, 2, 2, 0.6);
    let (p0, _) = svd_start(&d);
    let mut c = config(PolicyKind::ManifoldRegularized, &d, p0.rho(), 0.01, 0);
    c.clock = ClockMode::Wall;
    c.budget = Budget::Seconds(0.05);
    c.trace_every = 50;
    let (_, tr) = sgd_manifold(&p0, &d, &c).unwrap();
    let n = tr.len();
    assert!(tr.records[n - 1].elapsed_seconds > 0.05);
    assert!(tr.records[..n - 1].iter().all(|r| r.elapsed_seconds <= 0.05));
    assert!(tr.records.windows(2).all(|w| w[0].t < w[1].t && w[0].elapsed_seconds <= w[1].elapsed_seconds));
    c.clock = ClockMode::Frozen;
    assert!(sgd_manifold(&p0, &d, &c).is_err());
}

#[test]
fn unconfined_start_is_rejected() {
    let d = completion_instance(6, 10, 6, 2, 2, 0.6);
    let (mut p0, _) = svd_start(&d);
    let c = config(PolicyKind::ManifoldRegularized, &d, p0.rho(), 0.01, 10);
    p0.x *= 2.0 * (c.policy.rho0() / p0.rho()).sqrt();
    assert!(matches!(sgd_manifold(&p0, &d, &c), Err(WlraError::InitNotConfined { .. })));
}

#[test]
fn wrong_policy_kind_is_rejected() {
    let d = completion_instance(6, 10, 6, 2, 2, 0.6);
    let (p0, f0) = svd_start(&d);
    let c = config(PolicyKind::EuclideanRegularized, &d, rho_euclidean(&f0), 0.01, 10);
    assert!(sgd_manifold(&p0, &d, &c).is_err());
}

#[test]
fn constant_phi_dominates_adaptive_terms_along_trajectory() {
    let d = completion_instance(7, 20, 10, 2, 2, 0.5);
    let (mut p, _) = svd_start(&d);
    let reg = Regularization::new(0.01).unwrap();
    let c = config(PolicyKind::ManifoldRegularized, &d, p.rho(), 0.01, 0);
    let pol = &c.policy;
    let sampler = Sampler::new(&d).unwrap();
    let mut r = rng(8);
    for t in 0..2000u64 {
        let (a, b) = adaptive_a_b(pol, IterateRef::Manifold(&p), &d).unwrap();
        let (at, bt) = adaptive_a_b_tilde(pol, IterateRef::Manifold(&p)).unwrap();
        assert!(at >= a && bt >= b);
        let phi = pol.phi_min();
        assert!(phi >= a && phi >= b && phi >= pol.c_t(t) / pol.theta(), "t = {t}: A {a}, B {b}, phi {phi}");
        assert!(p.rho() <= pol.rho1());
        let g = stoch_grad_manifold(&p, sampler.sample(&mut r), &d, reg).unwrap();
        p = retract_scaled(&p, &g, -pol.c_t(t) / phi).unwrap();
    }
}

#[test]
fn adaptive_modes_run_and_respect_phi_min() {
    let d = completion_instance(9, 15, 8, 2, 2, 0.5);
    let (p0, f0) = svd_start(&d);
    for mode in [PhiMode::Adaptive, PhiMode::AdaptiveBound] {
        let mut c = config(PolicyKind::ManifoldRegularized, &d, p0.rho(), 0.01, 200);
        c.phi_mode = mode;
        let (_, tr) = sgd_manifold(&p0, &d, &c).unwrap();
        assert!(tr.records.iter().skip(1).all(|r| r.phi_t.unwrap() >= c.policy.phi_min()));
        let mut c = config(PolicyKind::EuclideanRegularized, &d, rho_euclidean(&f0), 0.01, 200);
        c.phi_mode = mode;
        let (_, tr) = sgd_euclidean(&f0, &d, &c).unwrap();
        assert!(tr.records.iter().skip(1).all(|r| r.phi_t.unwrap() >= c.policy.phi_min()));
    }
}

#[test]
fn euclidean_sgd_contracts_toward_zero_data() {
    let (m, n) = (10, 6);
    let cells: Vec<_> = (0..m * n).map(|i| (i / n, i % n, 0.0, 1.0 / (m * n) as f64)).collect();
    let d = ProblemData::new(m, n, 2, cells).unwrap();
    let mut r = rng(10);
    let f0 = random_pair(&mut r, m, n, 2, 0.3);
    let lambda = 0.5;
    let mut c = config(PolicyKind::EuclideanRegularized, &d, rho_euclidean(&f0), lambda, 5000);
    c.trace_every = 100;
    c.record_grad_norm = true;
    let (f, tr) = sgd_euclidean(&f0, &d, &c).unwrap();
    assert!(rho_euclidean(&f) < rho_euclidean(&f0));
    let tail: Vec<f64> = tr.records.iter().rev().take(10).map(|r| r.grad_norm.unwrap()).collect();
    assert!(tail.windows(2).all(|w| w[0] <= w[1]), "gradient norm should shrink: {tail:?}");
}

#[test]
fn pw_phi_min_stays_bounded_as_w0_shrinks() {
    let vals: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&w0: &f64| {
            let l = w0 / 2.0;
            let k = PolicyKind::ManifoldPositiveWeights;
            let r0 = rho0(k, 0.0, 1.0, l, Some(w0)).unwrap();
            phi_min(k, 1.0, l, 1.0, 2, r0, Some(w0)).unwrap()
        })
        .collect();
    assert!(vals.iter().all(|&v| v < 20.0), "{vals:?}");
}

fn objectives(tr: &IterTrace) -> Vec<f64> {
    tr.records.iter().map(|r| r.objective.unwrap()).collect()
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn line_searches_descend() {
    let d = completion_instance(11, 20, 10, 2, 2, 0.5);
    let (p0, f0) = svd_start(&d);
    let reg = Regularization::new(0.01).unwrap();
    let opts = AlsOptions::new(ArmijoParams::new(1e-4), Budget::Iterations(500));
    let (_, tr) = als_manifold(&p0, &d, reg, &opts).unwrap();
    assert_eq!(tr.len(), 501);
    assert!(non_increasing(&objectives(&tr)));

    let (_, tr) = als_euclidean(&f0, &d, reg, &opts).unwrap();
    let h = objectives(&tr);
    assert!(non_increasing(&h));

    let full = completion_instance(12, 10, 6, 2, 2, 1.0);
    let (q0, _) = svd_start(&full);
    let (_, tr) = als_pw(&q0, &full, &opts).unwrap();
    assert!(non_increasing(&objectives(&tr)));
}

#[test]
fn euclidean_line_search_stays_in_sublevel_set() {
    let d = completion_instance(13, 20, 10, 2, 2, 0.5);
    let reg = Regularization::new(0.01).unwrap();
    let mut r = rng(14);
    let f0 = random_pair(&mut r, 20, 10, 2, 1.0);
    let bound = cost_h(&f0, &d, reg).unwrap() / reg.lambda();
    let opts = AlsOptions::new(ArmijoParams::new(1e-4), Budget::Iterations(1));
    let mut f = f0;
    for _ in 0..300 {
        f = als_euclidean(&f, &d, reg, &opts).unwrap().0;
        assert!(rho_euclidean(&f) <= bound);
    }
}

#[test]
fn pw_line_search_keeps_x_bounded() {
    let d = completion_instance(15, 10, 6, 2, 2, 1.0);
    let w0 = d.require_positive_weights().unwrap();
    let mut r = rng(16);
    let p0 = ProductPoint::random(10, 6, 2, 1.0, &mut r).unwrap();
    let bound = d.a_norm() + (cost_g_hat(&p0, &d).unwrap() / w0).sqrt();
    let opts = AlsOptions::new(ArmijoParams::new(1e-4), Budget::Iterations(1));
    let mut p = p0;
    for _ in 0..300 {
        p = als_pw(&p, &d, &opts).unwrap().0;
        assert!(p.rho().sqrt() <= bound);
    }
}

#[test]
fn line_searches_hold_stationary_points() {
    let mut r = rng(17);
    let truth = ProductPoint::random(6, 5, 2, 1.0, &mut r).unwrap();
    let a = wlra_core::stiefel::assemble(&truth);
    let w = wlra_core::Matrix::from_elem((6, 5), 1.0 / 30.0);
    let d = ProblemData::from_dense(&a, &w, 2).unwrap();
    let opts = AlsOptions::new(ArmijoParams::new(1e-4), Budget::Iterations(5));
    let (p, tr) = als_pw(&truth, &d, &opts).unwrap();
    assert!(tr.records.iter().all(|r| r.cost_unregularized <= 1e-28));
    assert!(p.x.iter().zip(truth.x.iter()).all(|(a, b)| (a - b).abs() <= 1e-12));

    // Zero data and zero iterate: every gradient vanishes exactly.
    let zeros = ProblemData::from_dense(&(&a * 0.0), &w, 2).unwrap();
    let mut still = truth.clone();
    still.x.fill(0.0);
    let reg = Regularization::new(0.1).unwrap();
    let (p, _) = als_manifold(&still, &zeros, reg, &opts).unwrap();
    assert_eq!(p, still);
    let (f, _) = als_euclidean(&FactorPair::zeros(6, 5, 2), &zeros, reg, &opts).unwrap();
    assert_eq!(f, FactorPair::zeros(6, 5, 2));
}

#[test]
fn manifold_line_search_reaches_small_gradient() {
    let d = completion_instance(18, 20, 10, 2, 2, 0.5);
    let (p0, _) = svd_start(&d);
    let reg = Regularization::new(1e-2).unwrap();
    let mut opts = AlsOptions::new(ArmijoParams::new(108.0 / 270_000.0), Budget::Iterations(2000));
    opts.trace_every = 100;
    let (_, tr) = als_manifold(&p0, &d, reg, &opts).unwrap();
    let g = tr.last().unwrap().grad_norm.unwrap();
    assert!(g <= 1e-3, "final gradient norm {g}");
}
