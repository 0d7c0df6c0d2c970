use std::time::Instant;

use crate::error::{Result, WlraError};

/// Stopping rule for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// Exactly this many recursion steps.
    Iterations(u64),
    /// Stop at the first trace point whose elapsed time exceeds this.
    Seconds(f64),
}

/// How `elapsed_seconds` is filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClockMode {
    /// Monotonic clock sampled at trace points.
    #[default]
    Wall,
    /// Always `0.0`; makes traces byte-reproducible. Needs an iteration budget.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: u64,
    pub elapsed_seconds: f64,
    /// `F^` at the iterate, the quantity compared across algorithms.
    pub cost_unregularized: f64,
    /// Norm of the full gradient of the solver's own objective.
    pub grad_norm: Option<f64>,
    /// `phi_t` used for the step into this iterate (SGD only).
    pub phi_t: Option<f64>,
    /// The solver's own objective (`G`, `H` or `G^`), recorded by line searches.
    pub objective: Option<f64>,
}

/// Records in increasing `t` with non-decreasing `elapsed_seconds`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterTrace {
    pub records: Vec<TraceRecord>,
}

impl IterTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Last record with `t <= target`.
    pub fn at_or_before(&self, target: u64) -> Option<&TraceRecord> {
        self.records.iter().take_while(|r| r.t <= target).last()
    }
}

/// Bookkeeping shared by all solver loops.
pub(crate) struct Tracer {
    every: u64,
    budget: Budget,
    clock: ClockMode,
    start: Instant,
    out_of_time: bool,
    pub(crate) trace: IterTrace,
}

impl Tracer {
    pub(crate) fn new(every: u64, budget: Budget, clock: ClockMode) -> Result<Self> {
        if every == 0 {
            return Err(WlraError::InvalidParameter { name: "trace_every", reason: "must be >= 1".into() });
        }
        match budget {
            Budget::Seconds(s) if !(s >= 0.0 && s.is_finite()) => {
                return Err(WlraError::InvalidParameter { name: "max_seconds", reason: format!("must be finite and >= 0, got {s}") });
            }
            Budget::Seconds(_) if clock == ClockMode::Frozen => {
                return Err(WlraError::InvalidParameter { name: "budget", reason: "a time budget needs the wall clock".into() });
            }
            _ => {}
        }
        Ok(Self { every, budget, clock, start: Instant::now(), out_of_time: false, trace: IterTrace::default() })
    }

    /// True once no further step should run after step count `t`.
    pub(crate) fn done(&self, t: u64) -> bool {
        match self.budget {
            Budget::Iterations(n) => t >= n,
            Budget::Seconds(_) => self.out_of_time,
        }
    }

    pub(crate) fn due(&self, t: u64) -> bool {
        t.is_multiple_of(self.every) || matches!(self.budget, Budget::Iterations(n) if t == n)
    }

    pub(crate) fn record(&mut self, mut rec: TraceRecord) {
        rec.elapsed_seconds = match self.clock {
            ClockMode::Wall => self.start.elapsed().as_secs_f64(),
            ClockMode::Frozen => 0.0,
        };
        if let Budget::Seconds(max) = self.budget {
            if rec.elapsed_seconds > max {
                self.out_of_time = true;
            }
        }
        self.trace.records.push(rec);
    }
}

pub(crate) fn record(t: u64, cost: f64) -> TraceRecord {
    TraceRecord { t, elapsed_seconds: 0.0, cost_unregularized: cost, grad_norm: None, phi_t: None, objective: None }
}
