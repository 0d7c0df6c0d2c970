use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trace::{record, Budget, ClockMode, IterTrace, Tracer};
use crate::error::{Result, WlraError};
use crate::model::{
    cost_unregularized, full_grad_euclidean, full_grad_manifold, full_grad_pw, rho_euclidean, stoch_grad_euclidean, stoch_grad_manifold,
    stoch_grad_pw, FactorPair, ProblemData, Regularization, SampleIndex, Sampler,
};
use crate::step_policy::{adaptive_a_b, adaptive_a_b_tilde, phi_t, IterateRef, PolicyKind, StepPolicy};
use crate::stiefel::{retract_scaled, tangent_project, ProductPoint, ProductTangent};

/// Which `phi_t` the descent uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhiMode {
    /// `phi_t = Phi_min`.
    #[default]
    Constant,
    /// `max{A_t, B_t, c_t / Theta, Phi_min}`, an O(|Delta| k) scan per step.
    Adaptive,
    /// Same with the closed-form bounds `A~_t`, `B~_t`.
    AdaptiveBound,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub policy: StepPolicy,
    pub budget: Budget,
    pub seed: u64,
    pub trace_every: u64,
    pub phi_mode: PhiMode,
    /// Adds a full-gradient evaluation at every trace point.
    pub record_grad_norm: bool,
    pub clock: ClockMode,
}

impl SolverConfig {
    /// Constant `phi`, a trace point every 10 steps, wall clock.
    pub fn new(policy: StepPolicy, budget: Budget, seed: u64) -> Self {
        Self { policy, budget, seed, trace_every: 10, phi_mode: PhiMode::Constant, record_grad_norm: false, clock: ClockMode::Wall }
    }

    fn expect_kind(&self, kind: PolicyKind) -> Result<()> {
        if self.policy.kind() != kind {
            return Err(WlraError::InvalidParameter {
                name: "policy",
                reason: format!("solver needs {kind:?}, policy is {:?}", self.policy.kind()),
            });
        }
        Ok(())
    }
}

fn check_confined(rho: f64, rho0: f64) -> Result<()> {
    if rho > rho0 * (1.0 + 1e-12) {
        return Err(WlraError::InitNotConfined { rho, rho0 });
    }
    Ok(())
}

fn check_rank(k: usize, data: &ProblemData) -> Result<()> {
    if k != data.k() {
        return Err(WlraError::ShapeMismatch(format!("iterate has rank {k}, data has k = {}", data.k())));
    }
    Ok(())
}

fn choose_phi(config: &SolverConfig, it: IterateRef<'_>, data: &ProblemData, t: u64) -> Result<f64> {
    let pol = &config.policy;
    Ok(match config.phi_mode {
        PhiMode::Constant => pol.phi_min(),
        PhiMode::Adaptive => {
            let (a, b) = adaptive_a_b(pol, it, data)?;
            phi_t(pol, a, b, t)
        }
        PhiMode::AdaptiveBound => {
            let (a, b) = adaptive_a_b_tilde(pol, it)?;
            phi_t(pol, a, b, t)
        }
    })
}

/// `retract(p, s v)`; on a collapsed column, re-project `v` at `p` and try once more.
fn retract_guarded(p: &ProductPoint, v: &ProductTangent, s: f64) -> Result<ProductPoint> {
    match retract_scaled(p, v, s) {
        Err(WlraError::RankDeficient { .. }) => {
            let again = ProductTangent {
                du: tangent_project(&p.u, v.du.direction())?,
                dx: v.dx.clone(),
                dv: tangent_project(&p.v, v.dv.direction())?,
            };
            retract_scaled(p, &again, s)
        }
        other => other,
    }
}

fn manifold_descent<G, N>(
    init: &ProductPoint,
    data: &ProblemData,
    config: &SolverConfig,
    grad: G,
    full_norm: N,
) -> Result<(ProductPoint, IterTrace)>
where
    G: Fn(&ProductPoint, SampleIndex) -> Result<ProductTangent>,
    N: Fn(&ProductPoint) -> Result<f64>,
{
    check_rank(init.x.len(), data)?;
    check_confined(init.rho(), config.policy.rho0())?;
    let sampler = Sampler::new(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tracer = Tracer::new(config.trace_every, config.budget, config.clock)?;
    let snapshot = |p: &ProductPoint, t: u64, phi: Option<f64>| -> Result<_> {
        let mut r = record(t, cost_unregularized(p, data)?);
        r.phi_t = phi;
        if config.record_grad_norm {
            r.grad_norm = Some(full_norm(p)?);
        }
        Ok(r)
    };
    let mut p = init.clone();
    tracer.record(snapshot(&p, 0, None)?);
    let mut t = 0u64;
    while !tracer.done(t) {
        let s = sampler.sample(&mut rng);
        let g = grad(&p, s)?;
        let phi = choose_phi(config, IterateRef::Manifold(&p), data, t)?;
        let step = config.policy.c_t(t) / phi;
        p = retract_guarded(&p, &g, -step)?;
        t += 1;
        if tracer.due(t) {
            tracer.record(snapshot(&p, t, Some(phi))?);
        }
    }
    Ok((p, tracer.trace))
}

/// Confined SGD for `G` on the product manifold.
pub fn sgd_manifold(init: &ProductPoint, data: &ProblemData, config: &SolverConfig) -> Result<(ProductPoint, IterTrace)> {
    config.expect_kind(PolicyKind::ManifoldRegularized)?;
    let reg = Regularization::new(config.policy.lambda())?;
    manifold_descent(init, data, config, |p, s| stoch_grad_manifold(p, s, data, reg), |p| Ok(full_grad_manifold(p, data, reg)?.norm()))
}

/// Confined SGD for `G^ = F^` with positive weights; samples `g~`.
pub fn sgd_pw(init: &ProductPoint, data: &ProblemData, config: &SolverConfig) -> Result<(ProductPoint, IterTrace)> {
    config.expect_kind(PolicyKind::ManifoldPositiveWeights)?;
    let w0 = data.require_positive_weights()?;
    let reg = Regularization::for_positive_weights(config.policy.lambda(), w0)?;
    manifold_descent(init, data, config, |p, s| stoch_grad_pw(p, s, data, reg), |p| Ok(full_grad_pw(p, data)?.norm()))
}

/// Confined SGD for `H` over factor pairs; the retraction is addition.
pub fn sgd_euclidean(init: &FactorPair, data: &ProblemData, config: &SolverConfig) -> Result<(FactorPair, IterTrace)> {
    config.expect_kind(PolicyKind::EuclideanRegularized)?;
    check_rank(init.x.ncols(), data)?;
    let reg = Regularization::new(config.policy.lambda())?;
    check_confined(rho_euclidean(init), config.policy.rho0())?;
    let sampler = Sampler::new(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tracer = Tracer::new(config.trace_every, config.budget, config.clock)?;
    let snapshot = |f: &FactorPair, t: u64, phi: Option<f64>| -> Result<_> {
        let mut r = record(t, cost_unregularized(f, data)?);
        r.phi_t = phi;
        if config.record_grad_norm {
            r.grad_norm = Some(full_grad_euclidean(f, data, reg)?.norm());
        }
        Ok(r)
    };
    let mut f = init.clone();
    tracer.record(snapshot(&f, 0, None)?);
    let mut t = 0u64;
    while !tracer.done(t) {
        let s = sampler.sample(&mut rng);
        let g = stoch_grad_euclidean(&f, s, data, reg)?;
        let phi = choose_phi(config, IterateRef::Euclidean(&f), data, t)?;
        let step = config.policy.c_t(t) / phi;
        f = f.add_scaled(&g, -step);
        t += 1;
        if tracer.due(t) {
            tracer.record(snapshot(&f, t, Some(phi))?);
        }
    }
    Ok((f, tracer.trace))
}
