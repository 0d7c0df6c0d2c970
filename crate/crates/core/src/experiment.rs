//! Benchmark protocol: impute, initialize from the truncated SVD, run one
//! solver, and export the trace of `F^`.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SparseObservations;
use crate::error::{Result, WlraError};
use crate::model::{rho_euclidean, ProblemData, Regularization};
use crate::solvers::{
    als_euclidean, als_manifold, als_pw, sgd_euclidean, sgd_manifold, sgd_pw, AlsOptions, ArmijoParams, Budget, ClockMode, IterTrace,
    PhiMode, SolverConfig,
};
use crate::step_policy::{PolicyKind, Schedule, StepPolicy};
use crate::svd::{fill_missing_column_mean, truncated_svd_init};

pub const TRACE_HEADER: &str = "t,elapsed_seconds,cost_unregularized";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    SgdManifold,
    SgdEuclidean,
    SgdPw,
    AlsManifold,
    AlsEuclidean,
    AlsPw,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::SgdManifold,
        Algorithm::SgdEuclidean,
        Algorithm::SgdPw,
        Algorithm::AlsManifold,
        Algorithm::AlsEuclidean,
        Algorithm::AlsPw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SgdManifold => "sgd-manifold",
            Algorithm::SgdEuclidean => "sgd-euclidean",
            Algorithm::SgdPw => "sgd-pw",
            Algorithm::AlsManifold => "als-manifold",
            Algorithm::AlsEuclidean => "als-euclidean",
            Algorithm::AlsPw => "als-pw",
        }
    }

    pub fn is_sgd(self) -> bool {
        matches!(self, Algorithm::SgdManifold | Algorithm::SgdEuclidean | Algorithm::SgdPw)
    }

    pub fn is_positive_weights(self) -> bool {
        matches!(self, Algorithm::SgdPw | Algorithm::AlsPw)
    }

    /// 10 for stochastic descents, 1 for line searches.
    pub fn default_trace_every(self) -> u64 {
        if self.is_sgd() {
            10
        } else {
            1
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = WlraError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| WlraError::InvalidParameter {
            name: "algorithm",
            reason: format!("unknown algorithm \"{s}\", expected one of {}", Self::ALL.map(|a| a.name()).join(", ")),
        })
    }
}

/// Hand-tuned constants for a large ratings sample. They are only a starting
/// point for other data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub lambda: f64,
    pub big_k_manifold: f64,
    pub big_k_euclidean: f64,
    pub iota: f64,
}

pub const PRESETS: [Preset; 3] = [
    Preset { lambda: 1e-2, big_k_manifold: 1e3, big_k_euclidean: 1e4, iota: 108.0 / 270_000.0 },
    Preset { lambda: 1e-4, big_k_manifold: 1e3, big_k_euclidean: 1.0, iota: 11.0 / 270_000_000.0 },
    Preset { lambda: 1e-6, big_k_manifold: 1e4, big_k_euclidean: 1.0, iota: 1.0 / 54_000_000_000.0 },
];

/// Preset whose `lambda` matches to a relative `1e-9`.
pub fn preset_for(lambda: f64) -> Option<Preset> {
    PRESETS.into_iter().find(|p| ((p.lambda - lambda) / p.lambda).abs() < 1e-9)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub algorithm: Algorithm,
    pub k: usize,
    /// Ignored by `als-pw`; positive-weights runs default to `w0 / 2`.
    pub lambda: Option<f64>,
    pub big_k: f64,
    /// SGD schedule `1 / (1 + t / offset)`; `None` is `1 / (t + 1)`.
    pub schedule_offset: Option<f64>,
    pub iota: f64,
    pub alpha_bar: f64,
    pub beta: f64,
    pub seed: u64,
    pub budget: Budget,
    /// Defaults to [`Algorithm::default_trace_every`].
    pub trace_every: Option<u64>,
    pub phi_mode: PhiMode,
    pub clock: ClockMode,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(algorithm: Algorithm, k: usize, lambda: f64, budget: Budget) -> Self {
        Self {
            algorithm,
            k,
            lambda: Some(lambda),
            big_k: 1.0,
            schedule_offset: None,
            iota: 1e-4,
            alpha_bar: 1.0,
            beta: 0.5,
            seed: 0,
            budget,
            trace_every: None,
            phi_mode: PhiMode::Constant,
            clock: ClockMode::Wall,
            output: None,
        }
    }

    fn armijo(&self) -> ArmijoParams {
        ArmijoParams { alpha_bar: self.alpha_bar, beta: self.beta, iota: self.iota, max_backtracks: 60 }
    }

    fn trace_every(&self) -> u64 {
        self.trace_every.unwrap_or(self.algorithm.default_trace_every())
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            Regularization::new(l)?;
        } else if !self.algorithm.is_positive_weights() {
            return Err(WlraError::InvalidParameter { name: "lambda", reason: format!("{} needs lambda", self.algorithm) });
        }
        if self.k == 0 {
            return Err(WlraError::InvalidParameter { name: "k", reason: "must be >= 1".into() });
        }
        if self.trace_every == Some(0) {
            return Err(WlraError::InvalidParameter { name: "trace_every", reason: "must be >= 1".into() });
        }
        if self.algorithm.is_sgd() {
            if !(self.big_k >= 1.0 && self.big_k.is_finite()) {
                return Err(WlraError::InvalidParameter { name: "K", reason: format!("must be >= 1, got {}", self.big_k) });
            }
            if let Some(t0) = self.schedule_offset {
                Schedule::shifted_harmonic(t0)?;
            }
        } else {
            self.armijo().validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub algorithm: Algorithm,
    pub trace: IterTrace,
    /// `F^` at the truncated-SVD initializer.
    pub initial_cost: f64,
}

/// Binary weights on the observations, imputation, SVD initializer, solver.
/// Writes the trace CSV when `spec.output` is set.
pub fn run_experiment(spec: &ExperimentSpec, obs: &SparseObservations) -> Result<ExperimentResult> {
    spec.validate()?;
    let data = obs.to_problem(spec.k)?;
    let filled = fill_missing_column_mean(&data);
    let (point, pair) = truncated_svd_init(&filled, spec.k)?;
    let initial_cost = crate::model::cost_unregularized(&point, &data)?;
    let trace = run_solver(spec, &data, point, pair)?;
    if let Some(path) = &spec.output {
        write_trace_csv(path, &trace)?;
    }
    Ok(ExperimentResult { algorithm: spec.algorithm, trace, initial_cost })
}

fn pw_lambda(spec: &ExperimentSpec, data: &ProblemData) -> Result<f64> {
    let w0 = data.require_positive_weights()?;
    Ok(spec.lambda.unwrap_or(w0 / 2.0))
}

fn run_solver(
    spec: &ExperimentSpec,
    data: &ProblemData,
    point: crate::stiefel::ProductPoint,
    pair: crate::model::FactorPair,
) -> Result<IterTrace> {
    let sgd_config = |kind: PolicyKind, lambda: f64, init_sq: f64| -> Result<SolverConfig> {
        let schedule = match spec.schedule_offset {
            Some(t0) => Schedule::shifted_harmonic(t0)?,
            None => Schedule::Harmonic,
        };
        let policy = StepPolicy::with_schedule(kind, data, init_sq, lambda, spec.big_k, schedule)?;
        let mut c = SolverConfig::new(policy, spec.budget, spec.seed);
        c.trace_every = spec.trace_every();
        c.phi_mode = spec.phi_mode;
        c.clock = spec.clock;
        Ok(c)
    };
    let mut als = AlsOptions::new(spec.armijo(), spec.budget);
    als.trace_every = spec.trace_every();
    als.clock = spec.clock;
    let lambda = || spec.lambda.ok_or(WlraError::InvalidParameter { name: "lambda", reason: "required".into() });
    Ok(match spec.algorithm {
        Algorithm::SgdManifold => {
            let c = sgd_config(PolicyKind::ManifoldRegularized, lambda()?, point.rho())?;
            sgd_manifold(&point, data, &c)?.1
        }
        Algorithm::SgdEuclidean => {
            let c = sgd_config(PolicyKind::EuclideanRegularized, lambda()?, rho_euclidean(&pair))?;
            sgd_euclidean(&pair, data, &c)?.1
        }
        Algorithm::SgdPw => {
            let c = sgd_config(PolicyKind::ManifoldPositiveWeights, pw_lambda(spec, data)?, point.rho())?;
            sgd_pw(&point, data, &c)?.1
        }
        Algorithm::AlsManifold => als_manifold(&point, data, Regularization::new(lambda()?)?, &als)?.1,
        Algorithm::AlsEuclidean => als_euclidean(&pair, data, Regularization::new(lambda()?)?, &als)?.1,
        Algorithm::AlsPw => als_pw(&point, data, &als)?.1,
    })
}

/// `t,elapsed_seconds,cost_unregularized`, LF line endings, round-trip floats.
pub fn write_trace_csv(path: &Path, trace: &IterTrace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| WlraError::Io(format!("{}: {e}", path.display())))?);
    write_trace(&mut w, trace)?;
    w.flush()?;
    Ok(())
}

pub fn write_trace<W: Write>(w: &mut W, trace: &IterTrace) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in &trace.records {
        writeln!(w, "{},{:?},{:?}", r.t, r.elapsed_seconds, r.cost_unregularized)?;
    }
    Ok(())
}

/// How traces are lined up in a merged table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alignment {
    /// One row per `t` in the union of all traces.
    Iteration,
    /// `round(horizon / bin)` rows at the bin ends `bin, 2 bin, ...`.
    Time { bin: f64, horizon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedTable {
    pub names: Vec<String>,
    /// `(t or seconds, one cost per trace)`.
    pub rows: Vec<(f64, Vec<f64>)>,
}

impl MergedTable {
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "t_or_seconds,{}", self.names.join(","))?;
        for (key, vals) in &self.rows {
            let cells: Vec<String> = vals.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{key:?},{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| WlraError::Io(format!("{}: {e}", path.display())))?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Cost of the last record satisfying `keep`, else the first record's cost.
fn carried<F: Fn(&crate::solvers::TraceRecord) -> bool>(trace: &IterTrace, keep: F) -> f64 {
    let mut val = trace.records.first().map(|r| r.cost_unregularized).unwrap_or(f64::NAN);
    for r in &trace.records {
        if keep(r) {
            val = r.cost_unregularized;
        } else {
            break;
        }
    }
    val
}

/// Aligns traces with last-observation-carried-forward.
pub fn merge_traces(names: &[String], traces: &[IterTrace], align: Alignment) -> Result<MergedTable> {
    if names.len() != traces.len() {
        return Err(WlraError::InvalidParameter { name: "names", reason: "one name per trace".into() });
    }
    let rows = match align {
        Alignment::Iteration => {
            let mut ts: Vec<u64> = traces.iter().flat_map(|t| t.records.iter().map(|r| r.t)).collect();
            ts.sort_unstable();
            ts.dedup();
            ts.into_iter().map(|t| (t as f64, traces.iter().map(|tr| carried(tr, |r| r.t <= t)).collect())).collect()
        }
        Alignment::Time { bin, horizon } => {
            if !(bin > 0.0 && horizon > 0.0 && bin.is_finite() && horizon.is_finite()) {
                return Err(WlraError::InvalidParameter {
                    name: "bin",
                    reason: format!("bin {bin} and horizon {horizon} must be positive"),
                });
            }
            let count = (horizon / bin).round() as usize;
            (1..=count)
                .map(|i| {
                    let end = i as f64 * bin;
                    (end, traces.iter().map(|tr| carried(tr, |r| r.elapsed_seconds <= end)).collect())
                })
                .collect()
        }
    };
    Ok(MergedTable { names: names.to_vec(), rows })
}

/// Runs each spec on the same observations and merges the traces.
pub fn compare(specs: &[(String, ExperimentSpec)], obs: &SparseObservations, align: Alignment) -> Result<MergedTable> {
    let Some((_, first)) = specs.first() else {
        return Err(WlraError::InvalidParameter { name: "specs", reason: "nothing to compare".into() });
    };
    if let Some((name, s)) = specs.iter().find(|(_, s)| s.k != first.k) {
        return Err(WlraError::MismatchedData(format!("{name} uses k = {}, expected {}", s.k, first.k)));
    }
    let mut names = Vec::new();
    let mut traces = Vec::new();
    for (name, spec) in specs {
        let mut spec = spec.clone();
        spec.output = None;
        traces.push(run_experiment(&spec, obs)?.trace);
        names.push(name.clone());
    }
    merge_traces(&names, &traces, align)
}
