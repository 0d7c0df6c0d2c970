use super::armijo::{armijo_step, ArmijoParams};
use super::trace::{record, Budget, ClockMode, IterTrace, Tracer};
use crate::error::{Result, WlraError};
use crate::model::{
    cost_g, cost_h, cost_unregularized, full_grad_euclidean, full_grad_manifold, full_grad_pw, FactorPair, ProblemData, Regularization,
};
use crate::stiefel::{retract_scaled, ProductPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlsOptions {
    pub params: ArmijoParams,
    pub budget: Budget,
    pub trace_every: u64,
    pub clock: ClockMode,
}

impl AlsOptions {
    /// A trace point after every step, wall clock.
    pub fn new(params: ArmijoParams, budget: Budget) -> Self {
        Self { params, budget, trace_every: 1, clock: ClockMode::Wall }
    }
}

/// The Armijo test can only fail at a non-critical point through rounding once
/// the predicted decrease sinks below a few ulps of the objective.
fn below_resolution(f: f64, grad_sq: f64, params: &ArmijoParams) -> bool {
    params.iota * params.alpha_bar * grad_sq <= 64.0 * f64::EPSILON * f.abs().max(1.0)
}

/// Steepest descent with Armijo steps: `p_{t+1} = R_{p_t}(-tau_t grad f(p_t))`.
fn line_search<P, D, O, C, G, S>(init: &P, opts: &AlsOptions, objective: O, traced_cost: C, grad: G, step: S) -> Result<(P, IterTrace)>
where
    P: Clone,
    O: Fn(&P) -> Result<f64>,
    C: Fn(&P) -> Result<f64>,
    G: Fn(&P) -> Result<(D, f64)>,
    S: Fn(&P, &D, f64) -> Result<P>,
{
    opts.params.validate()?;
    let mut tracer = Tracer::new(opts.trace_every, opts.budget, opts.clock)?;
    let mut p = init.clone();
    let mut f = objective(&p)?;
    let (mut g, mut gsq) = grad(&p)?;
    let snapshot = |p: &P, t: u64, f: f64, gsq: f64| -> Result<_> {
        let mut r = record(t, traced_cost(p)?);
        r.grad_norm = Some(gsq.sqrt());
        r.objective = Some(f);
        Ok(r)
    };
    tracer.record(snapshot(&p, 0, f, gsq)?);
    let mut stalled = false;
    let mut t = 0u64;
    while !tracer.done(t) {
        if !stalled {
            let outcome = armijo_step(f, -gsq, &opts.params, |tau| {
                let q = step(&p, &g, -tau)?;
                let v = objective(&q)?;
                Ok((q, v))
            });
            match outcome {
                Ok(out) => {
                    if let Some(q) = out.point {
                        p = q;
                        f = out.value;
                        (g, gsq) = grad(&p)?;
                    }
                }
                Err(WlraError::BacktrackLimit { .. }) if below_resolution(f, gsq, &opts.params) => stalled = true,
                Err(e) => return Err(e),
            }
        }
        t += 1;
        if tracer.due(t) {
            tracer.record(snapshot(&p, t, f, gsq)?);
        }
    }
    Ok((p, tracer.trace))
}

/// Armijo line search for `G` on the product manifold.
pub fn als_manifold(init: &ProductPoint, data: &ProblemData, reg: Regularization, opts: &AlsOptions) -> Result<(ProductPoint, IterTrace)> {
    line_search(
        init,
        opts,
        |p| cost_g(p, data, reg),
        |p| cost_unregularized(p, data),
        |p| {
            let g = full_grad_manifold(p, data, reg)?;
            let n = g.inner(&g);
            Ok((g, n))
        },
        retract_scaled,
    )
}

/// Armijo line search for `H` over factor pairs.
pub fn als_euclidean(init: &FactorPair, data: &ProblemData, reg: Regularization, opts: &AlsOptions) -> Result<(FactorPair, IterTrace)> {
    line_search(
        init,
        opts,
        |f| cost_h(f, data, reg),
        |f| cost_unregularized(f, data),
        |f| {
            let g = full_grad_euclidean(f, data, reg)?;
            let n = g.inner(&g);
            Ok((g, n))
        },
        |f, g, s| Ok(f.add_scaled(g, s)),
    )
}

/// Armijo line search for the unregularized `G^` with positive weights.
pub fn als_pw(init: &ProductPoint, data: &ProblemData, opts: &AlsOptions) -> Result<(ProductPoint, IterTrace)> {
    data.require_positive_weights()?;
    line_search(
        init,
        opts,
        |p| cost_unregularized(p, data),
        |p| cost_unregularized(p, data),
        |p| {
            let g = full_grad_pw(p, data)?;
            let n = g.inner(&g);
            Ok((g, n))
        },
        retract_scaled,
    )
}
