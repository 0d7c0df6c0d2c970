use crate::error::{Result, WlraError};

/// Backtracking constants: trial steps are `beta^m * alpha_bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoParams {
    pub alpha_bar: f64,
    pub beta: f64,
    pub iota: f64,
    pub max_backtracks: u32,
}

impl ArmijoParams {
    /// `alpha_bar = 1`, `beta = 0.5`, at most 60 reductions.
    pub fn new(iota: f64) -> Self {
        Self { alpha_bar: 1.0, beta: 0.5, iota, max_backtracks: 60 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_bar > 0.0 && self.alpha_bar.is_finite()) {
            return Err(WlraError::InvalidParameter { name: "alpha_bar", reason: format!("must be positive, got {}", self.alpha_bar) });
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(WlraError::InvalidParameter { name: "beta", reason: format!("must lie in (0, 1), got {}", self.beta) });
        }
        if !(self.iota > 0.0 && self.iota < 1.0) {
            return Err(WlraError::InvalidParameter { name: "iota", reason: format!("must lie in (0, 1), got {}", self.iota) });
        }
        Ok(())
    }
}

/// Accepted Armijo point.
#[derive(Debug, Clone)]
pub struct ArmijoOutcome<P> {
    /// `tau_A = beta^m * alpha_bar`.
    pub tau: f64,
    pub m: u32,
    pub point: Option<P>,
    pub value: f64,
}

/// Smallest `m >= 0` with `f(x) - f(R_x(tau eta)) >= -iota * tau * <grad f(x), eta>`.
///
/// `f0` is `f(x)`, `slope` is `<grad f(x), eta>` and `trial(tau)` returns the
/// retracted point with its cost. A zero slope accepts `m = 0` without a trial
/// and returns `point = None`, meaning the iterate is unchanged.
pub fn armijo_step<P, T>(f0: f64, slope: f64, params: &ArmijoParams, mut trial: T) -> Result<ArmijoOutcome<P>>
where
    T: FnMut(f64) -> Result<(P, f64)>,
{
    params.validate()?;
    if slope == 0.0 {
        return Ok(ArmijoOutcome { tau: params.alpha_bar, m: 0, point: None, value: f0 });
    }
    let mut tau = params.alpha_bar;
    for m in 0..=params.max_backtracks {
        match trial(tau) {
            Ok((point, value)) => {
                if f0 - value >= -params.iota * tau * slope {
                    return Ok(ArmijoOutcome { tau, m, point: Some(point), value });
                }
            }
            // An overlong trial can collapse a column; shorter ones will not.
            Err(WlraError::RankDeficient { .. }) => {}
            Err(e) => return Err(e),
        }
        tau *= params.beta;
    }
    Err(WlraError::BacktrackLimit { backtracks: params.max_backtracks })
}
