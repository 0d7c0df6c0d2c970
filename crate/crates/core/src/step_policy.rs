//! Step-size safeguards for the confined stochastic gradient descents.
//!
//! The step at iteration `t` is `c_t / phi_t` with
//! `phi_t = max{A_t, B_t, c_t / Theta, Phi_min}`. Constant mode fixes
//! `phi_t = Phi_min`, which already dominates the other three terms along any
//! trajectory confined to `rho <= rho_1`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Result, WlraError};
use crate::model::{pw_residual, rho_euclidean, FactorPair, ProblemData};
use crate::stiefel::ProductPoint;

/// `sum_{t >= 0} 1 / (t + 1)^2`.
pub const HARMONIC_SIGMA: f64 = PI * PI / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    ManifoldRegularized,
    EuclideanRegularized,
    ManifoldPositiveWeights,
}

/// Preferred step sizes `c_t`.
#[derive(Clone)]
pub enum Schedule {
    /// `c_t = 1 / (t + 1)`, with `c = 1` and `sigma = pi^2 / 6`.
    Harmonic,
    /// Caller-supplied rule with `c = sup c_t` and `sigma = sum c_t^2`.
    Custom { rate: Arc<dyn Fn(u64) -> f64 + Send + Sync>, sup: f64, sum_sq: f64 },
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Harmonic => f.write_str("Harmonic"),
            Schedule::Custom { sup, sum_sq, .. } => {
                f.debug_struct("Custom").field("sup", sup).field("sum_sq", sum_sq).finish_non_exhaustive()
            }
        }
    }
}

impl Schedule {
    /// `c_t = 1 / (1 + t / t0)` with `c = 1`; `t0 = 1` is the harmonic rule.
    /// `sigma` is an upper bound: an exact partial sum plus an integral tail.
    pub fn shifted_harmonic(t0: f64) -> Result<Self> {
        if !(t0 >= 1.0 && t0.is_finite()) {
            return Err(WlraError::InvalidParameter { name: "schedule offset", reason: format!("must be >= 1, got {t0}") });
        }
        let n = (64.0 * t0).clamp(1e5, 1e7) as u64;
        let head: f64 = (0..n).map(|t| (1.0 + t as f64 / t0).powi(-2)).sum();
        let tail = t0 * t0 / (n as f64 - 1.0 + t0);
        Ok(Schedule::Custom { rate: Arc::new(move |t| 1.0 / (1.0 + t as f64 / t0)), sup: 1.0, sum_sq: head + tail })
    }

    pub fn c_t(&self, t: u64) -> f64 {
        match self {
            Schedule::Harmonic => 1.0 / (t as f64 + 1.0),
            Schedule::Custom { rate, .. } => rate(t),
        }
    }

    /// `c = sup_t c_t`.
    pub fn c(&self) -> f64 {
        match self {
            Schedule::Harmonic => 1.0,
            Schedule::Custom { sup, .. } => *sup,
        }
    }

    /// `sigma = sum_t c_t^2`.
    pub fn sigma(&self) -> f64 {
        match self {
            Schedule::Harmonic => HARMONIC_SIGMA,
            Schedule::Custom { sum_sq, .. } => *sum_sq,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Schedule::Custom { sup, sum_sq, .. } = self {
            if !(*sup > 0.0 && sup.is_finite()) {
                return Err(WlraError::InvalidParameter { name: "schedule", reason: format!("sup c_t must be positive, got {sup}") });
            }
            if !(*sum_sq > 0.0 && sum_sq.is_finite()) {
                return Err(WlraError::InvalidParameter {
                    name: "schedule",
                    reason: format!("sum c_t^2 must be positive and finite, got {sum_sq}"),
                });
            }
        }
        Ok(())
    }
}

/// Borrowed iterate of either parametrization.
#[derive(Debug, Clone, Copy)]
pub enum IterateRef<'a> {
    Manifold(&'a ProductPoint),
    Euclidean(&'a FactorPair),
}

/// Largest squared observed entry.
pub fn alpha_of(data: &ProblemData) -> Result<f64> {
    if data.is_empty() {
        return Err(WlraError::EmptySupport);
    }
    Ok(data.entries().iter().map(|e| e.a * e.a).fold(0.0, f64::max))
}

fn check_lambda(kind: PolicyKind, lambda: f64, w0: Option<f64>) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(WlraError::InvalidParameter { name: "lambda", reason: format!("must be a positive number, got {lambda}") });
    }
    if kind == PolicyKind::ManifoldPositiveWeights {
        let w0 = w0.ok_or(WlraError::InvalidParameter { name: "w0", reason: "required for positive weights".into() })?;
        if lambda >= w0 {
            return Err(WlraError::LambdaOutOfRange { lambda, w0 });
        }
    }
    Ok(())
}

/// Radius beyond which every sample gradient points away from the origin.
fn confinement_threshold(kind: PolicyKind, alpha: f64, lambda: f64, w0: Option<f64>) -> f64 {
    match kind {
        PolicyKind::ManifoldRegularized => alpha / (4.0 * lambda),
        PolicyKind::EuclideanRegularized => alpha / (2.0 * lambda),
        PolicyKind::ManifoldPositiveWeights => {
            let w0 = w0.expect("checked by check_lambda");
            alpha / (4.0 * lambda * (1.0 - lambda / w0))
        }
    }
}

/// `rho_0 = max{init, threshold}` for the given kind.
pub fn rho0(kind: PolicyKind, init_norm_sq: f64, alpha: f64, lambda: f64, w0: Option<f64>) -> Result<f64> {
    check_lambda(kind, lambda, w0)?;
    Ok(init_norm_sq.max(confinement_threshold(kind, alpha, lambda, w0)))
}

/// `(a, b)` paired with each kind.
pub fn default_a_b(kind: PolicyKind, lambda: f64, w0: Option<f64>) -> Result<(f64, f64)> {
    check_lambda(kind, lambda, w0)?;
    Ok(match kind {
        PolicyKind::ManifoldRegularized | PolicyKind::EuclideanRegularized => (1.0 / lambda, 1.0 / lambda.sqrt()),
        PolicyKind::ManifoldPositiveWeights => {
            let w0 = w0.expect("checked");
            (1.0 / w0, 1.0 / w0.sqrt())
        }
    })
}

/// `Phi_min` under the harmonic schedule.
pub fn phi_min(kind: PolicyKind, big_k: f64, lambda: f64, alpha: f64, k: usize, rho0: f64, w0: Option<f64>) -> Result<f64> {
    phi_min_for_schedule(kind, big_k, lambda, alpha, k, rho0, w0, 1.0, HARMONIC_SIGMA)
}

/// `Phi_min` for a schedule with `sup c_t = c` and `sum c_t^2 = sigma`.
#[allow(clippy::too_many_arguments)]
pub fn phi_min_for_schedule(
    kind: PolicyKind,
    big_k: f64,
    lambda: f64,
    alpha: f64,
    k: usize,
    rho0: f64,
    w0: Option<f64>,
    c: f64,
    sigma: f64,
) -> Result<f64> {
    check_lambda(kind, lambda, w0)?;
    if !(big_k >= 1.0) || !big_k.is_finite() {
        return Err(WlraError::InvalidParameter { name: "K", reason: format!("must be >= 1, got {big_k}") });
    }
    let kf = k as f64;
    let sa = alpha.sqrt();
    let l = lambda;
    let bound = match kind {
        PolicyKind::ManifoldRegularized => {
            let t1 = (l + 2.0 * l.sqrt() + 1.0) * alpha;
            let t2 = (32.0 * kf * alpha * l + 8.0 * kf * (2.0 + l * l) * (2.0 * l * rho0 + 2.0 * c + sigma)).sqrt();
            t1.max(t2)
        }
        PolicyKind::EuclideanRegularized => {
            let t1 = 2.0 * alpha * sa + alpha * alpha / (2.0 * l) + 2.0 * l * alpha;
            let rho1 = rho0 + (2.0 * c + sigma) / (2.0 * l);
            let t2 = (((2.0 * sa + rho1).powi(2) + 4.0 * l * l) * (2.0 * l * rho1)).sqrt();
            t1.max(t2)
        }
        PolicyKind::ManifoldPositiveWeights => {
            let w0 = w0.expect("checked");
            let (a, b) = (1.0 / w0, 1.0 / w0.sqrt());
            let t1 = (l + 2.0 * l.sqrt() + 1.0) * alpha / (a * l * (1.0 - l / w0));
            // Any constant >= c + sigma / 2 keeps the bound valid; this uses c + sigma.
            let rho_hat = rho0 + (c + sigma) * a;
            let t2 = (16.0 * kf * (2.0 * alpha + (2.0 + l * l) * rho_hat)).sqrt() / b;
            t1.max(t2)
        }
    };
    Ok(big_k * bound)
}

/// All step-size constants for one solver run.
#[derive(Debug, Clone)]
pub struct StepPolicy {
    kind: PolicyKind,
    lambda: f64,
    a: f64,
    b: f64,
    theta: f64,
    phi_min: f64,
    big_k: f64,
    schedule: Schedule,
    alpha: f64,
    rho0: f64,
    rho1: f64,
    k: usize,
    w0: Option<f64>,
}

impl StepPolicy {
    /// Harmonic schedule. `init_norm_sq` is `||x_0||^2` or `||X_0||^2 + ||Y_0||^2`.
    pub fn new(kind: PolicyKind, data: &ProblemData, init_norm_sq: f64, lambda: f64, big_k: f64) -> Result<Self> {
        Self::with_schedule(kind, data, init_norm_sq, lambda, big_k, Schedule::Harmonic)
    }

    pub fn with_schedule(
        kind: PolicyKind,
        data: &ProblemData,
        init_norm_sq: f64,
        lambda: f64,
        big_k: f64,
        schedule: Schedule,
    ) -> Result<Self> {
        schedule.validate()?;
        let w0 = match kind {
            PolicyKind::ManifoldPositiveWeights => Some(data.require_positive_weights()?),
            _ => None,
        };
        let alpha = alpha_of(data)?;
        let rho0 = rho0(kind, init_norm_sq, alpha, lambda, w0)?;
        let (a, b) = default_a_b(kind, lambda, w0)?;
        let (c, sigma) = (schedule.c(), schedule.sigma());
        let phi_min = phi_min_for_schedule(kind, big_k, lambda, alpha, data.k(), rho0, w0, c, sigma)?;
        Ok(Self {
            kind,
            lambda,
            a,
            b,
            theta: c / phi_min,
            phi_min,
            big_k,
            schedule,
            alpha,
            rho0,
            rho1: rho0 + c * a + b * b * sigma / 2.0,
            k: data.k(),
            w0,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn phi_min(&self) -> f64 {
        self.phi_min
    }
    pub fn big_k(&self) -> f64 {
        self.big_k
    }
    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }
    pub fn c(&self) -> f64 {
        self.schedule.c()
    }
    pub fn sigma(&self) -> f64 {
        self.schedule.sigma()
    }
    pub fn c_t(&self, t: u64) -> f64 {
        self.schedule.c_t(t)
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn rho0(&self) -> f64 {
        self.rho0
    }
    pub fn rho1(&self) -> f64 {
        self.rho1
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn w0(&self) -> Option<f64> {
        self.w0
    }
}

fn kind_mismatch(kind: PolicyKind) -> WlraError {
    WlraError::InvalidParameter { name: "iterate", reason: format!("iterate type does not match policy kind {kind:?}") }
}

/// `(A_t, B_t)`: maxima over `Delta` of the confinement defect and Hessian size.
pub fn adaptive_a_b(policy: &StepPolicy, iterate: IterateRef<'_>, data: &ProblemData) -> Result<(f64, f64)> {
    let lambda = policy.lambda;
    let (mut amax, mut bmax) = (0.0f64, 0.0f64);
    match (policy.kind, iterate) {
        (PolicyKind::ManifoldRegularized | PolicyKind::ManifoldPositiveWeights, IterateRef::Manifold(p)) => {
            let pw = policy.kind == PolicyKind::ManifoldPositiveWeights;
            let (m, n, k) = p.dims();
            if (m, n) != (data.m(), data.n()) {
                return Err(WlraError::ShapeMismatch(format!("iterate is {m}x{n}, data is {}x{}", data.m(), data.n())));
            }
            let xsq = p.rho();
            for e in data.entries() {
                let u = p.u.matrix().row(e.row);
                let v = p.v.matrix().row(e.col);
                let mut pv = 0.0;
                for l in 0..k {
                    pv += u[l] * p.x[l] * v[l];
                }
                let r = if pw { pw_residual(e, pv, lambda) } else { e.a - pv };
                amax = amax.max(4.0 * r * pv - 4.0 * lambda * xsq);
                let mut s = 0.0;
                for l in 0..k {
                    let t = -r * u[l] * v[l] + lambda * p.x[l];
                    s += t * t;
                }
                bmax = bmax.max((8.0 * s).sqrt());
            }
        }
        (PolicyKind::EuclideanRegularized, IterateRef::Euclidean(f)) => {
            if (f.x.nrows(), f.y.nrows()) != (data.m(), data.n()) {
                return Err(WlraError::ShapeMismatch("factor pair does not match data".into()));
            }
            let s_all = rho_euclidean(f);
            let row_sq: Vec<f64> = f.x.rows().into_iter().map(|r| r.dot(&r)).collect();
            let col_sq: Vec<f64> = f.y.rows().into_iter().map(|r| r.dot(&r)).collect();
            for e in data.entries() {
                let pv = f.entry(e.row, e.col);
                let r = e.a - pv;
                amax = amax.max(8.0 * r * pv - 4.0 * lambda * s_all);
                let inner = r * r * (row_sq[e.row] + col_sq[e.col]) + 4.0 * lambda * r * pv + lambda * lambda * s_all;
                bmax = bmax.max((4.0 * inner.max(0.0)).sqrt());
            }
        }
        (kind, _) => return Err(kind_mismatch(kind)),
    }
    Ok((amax.max(0.0) / policy.a, bmax / policy.b))
}

/// `(A~_t, B~_t)`: closed-form upper bounds needing only the iterate norm and `alpha`.
pub fn adaptive_a_b_tilde(policy: &StepPolicy, iterate: IterateRef<'_>) -> Result<(f64, f64)> {
    let (l, alpha, kf) = (policy.lambda, policy.alpha, policy.k as f64);
    let sa = alpha.sqrt();
    match (policy.kind, iterate) {
        (PolicyKind::ManifoldRegularized | PolicyKind::ManifoldPositiveWeights, IterateRef::Manifold(p)) => {
            let xsq = p.rho();
            let xn = xsq.sqrt();
            let thr = confinement_threshold(policy.kind, alpha, l, policy.w0);
            let at = if xsq >= thr { 0.0 } else { (4.0 * (sa + xn) * xn + 4.0 * l * xsq) / policy.a };
            let bt = (16.0 * kf * (2.0 * alpha + (2.0 + l * l) * xsq)).sqrt() / policy.b;
            Ok((at, bt))
        }
        (PolicyKind::EuclideanRegularized, IterateRef::Euclidean(f)) => {
            let s = rho_euclidean(f);
            let thr = confinement_threshold(policy.kind, alpha, l, None);
            let at = if s >= thr { 0.0 } else { 4.0 * ((sa + s / 2.0) * s + l * s) / policy.a };
            let bt = (8.0 * (sa + s / 2.0).powi(2) * s + 8.0 * l * l * s).sqrt() / policy.b;
            Ok((at, bt))
        }
        (kind, _) => Err(kind_mismatch(kind)),
    }
}

/// `phi_t = max{A_t, B_t, c_t / Theta, Phi_min}`.
pub fn phi_t(policy: &StepPolicy, a_t: f64, b_t: f64, t: u64) -> f64 {
    a_t.max(b_t).max(policy.c_t(t) / policy.theta).max(policy.phi_min)
}
