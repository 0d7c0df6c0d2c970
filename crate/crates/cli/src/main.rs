//! `wlra`: benchmark harness for weighted low-rank approximation solvers.

mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wlra_core::data::{load_triplets, sample_submatrix, synthetic, write_triplets, LoadOptions, SparseObservations, SynthSpec};
use wlra_core::experiment::{compare, preset_for, run_experiment, write_trace, Algorithm, Alignment, ExperimentSpec};
use wlra_core::svd::{eckart_young_best, fill_missing_column_mean, svd, truncated_svd_init};
use wlra_core::{Budget, ClockMode, PhiMode};

use config::ConfigFile;

#[derive(Parser, Debug)]
#[command(name = "wlra", version, about = "Weighted low-rank approximation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a triplet file and rewrite it 0-based.
    Ingest {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep a uniformly sampled set of rows and columns.
    Sample {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long = "sample-rows")]
        sample_rows: usize,
        #[arg(long = "sample-cols")]
        sample_cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a noisy low-rank instance observed through a Bernoulli mask.
    Synth {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.4)]
        observe: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the truncated-SVD initializer of the column-mean imputation.
    InitSvd {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        k: usize,
    },
    /// Run one solver and write its trace.
    Run {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run several configurations on one data set and merge their traces.
    Compare {
        #[command(flatten)]
        input: InputArgs,
        /// A run file per algorithm; `name=` sets its column header.
        #[arg(long = "spec", required = true)]
        specs: Vec<PathBuf>,
        /// Align on elapsed-time bins of this width instead of iterations.
        #[arg(long)]
        bin: Option<f64>,
        #[arg(long, requires = "bin")]
        horizon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// Indices in the file start at 1.
    #[arg(long)]
    one_based: bool,
    /// Row count; defaults to the largest row index + 1.
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
}

impl InputArgs {
    fn load(&self) -> Result<SparseObservations, String> {
        let opts = LoadOptions { one_based: self.one_based, rows: self.rows, cols: self.cols };
        load_triplets(&self.input, opts).map_err(|e| format!("{}: {e}", self.input.display()))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PhiArg {
    Constant,
    Adaptive,
    Bound,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// key=value file with the same keys as these flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long = "bigK", allow_hyphen_values = true)]
    big_k: Option<f64>,
    /// SGD step schedule 1 / (1 + t / offset); omitted means 1 / (t + 1).
    #[arg(long = "schedule-offset", allow_hyphen_values = true)]
    schedule_offset: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    iota: Option<f64>,
    #[arg(long = "alpha-bar", allow_hyphen_values = true)]
    alpha_bar: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "seconds")]
    iters: Option<u64>,
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long = "trace-every")]
    trace_every: Option<u64>,
    #[arg(long, value_enum)]
    phi: Option<PhiArg>,
    /// Write 0 for elapsed time so repeated runs give identical bytes.
    #[arg(long = "frozen-clock")]
    frozen_clock: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn pick<T: std::str::FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str) -> Result<Option<T>, String> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => cfg.get(key),
    }
}

/// Merges flags over the config file and fills preset defaults.
fn resolve(args: &RunArgs, cfg: &ConfigFile, warnings: &mut Vec<String>) -> Result<(String, ExperimentSpec), String> {
    let algorithm: Algorithm = pick(args.algorithm.clone(), cfg, "algorithm")?
        .ok_or("missing --algorithm")?
        .parse::<Algorithm>()
        .map_err(|e| format!("--algorithm: {e}"))?;
    let name = cfg.raw("name").map(str::to_string).unwrap_or_else(|| algorithm.name().to_string());
    let k: usize = pick(args.k, cfg, "k")?.ok_or("missing --k")?;
    if k == 0 {
        return Err("invalid value for --k: must be >= 1".into());
    }
    let lambda: Option<f64> = pick(args.lambda, cfg, "lambda")?;
    match lambda {
        Some(l) if !(l > 0.0 && l.is_finite()) => return Err(format!("invalid value for --lambda: must be a positive number, got {l}")),
        None if !algorithm.is_positive_weights() => return Err("missing --lambda".into()),
        _ => {}
    }
    let preset = lambda.and_then(preset_for);
    let euclidean = algorithm == Algorithm::SgdEuclidean;
    let big_k = match pick(args.big_k, cfg, "bigK")? {
        Some(v) => v,
        None if algorithm.is_sgd() => {
            let p = preset.ok_or("missing --bigK (presets exist only for lambda = 1e-2, 1e-4, 1e-6)")?;
            let v = if euclidean { p.big_k_euclidean } else { p.big_k_manifold };
            warnings.push(format!("using preset --bigK {v} for lambda {}; presets were tuned on one specific data sample", p.lambda));
            v
        }
        None => 1.0,
    };
    if algorithm.is_sgd() && !(big_k >= 1.0 && big_k.is_finite()) {
        return Err(format!("invalid value for --bigK: must be >= 1, got {big_k}"));
    }
    let schedule_offset: Option<f64> = pick(args.schedule_offset, cfg, "schedule-offset")?;
    if let Some(t0) = schedule_offset {
        if !(t0 >= 1.0 && t0.is_finite()) {
            return Err(format!("invalid value for --schedule-offset: must be >= 1, got {t0}"));
        }
    }
    let iota = match pick(args.iota, cfg, "iota")? {
        Some(v) => v,
        None if !algorithm.is_sgd() => {
            let p = preset.ok_or("missing --iota (presets exist only for lambda = 1e-2, 1e-4, 1e-6)")?;
            warnings.push(format!("using preset --iota {} for lambda {}", p.iota, p.lambda));
            p.iota
        }
        None => 1e-4,
    };
    let alpha_bar = pick(args.alpha_bar, cfg, "alpha-bar")?.unwrap_or(1.0);
    let beta = pick(args.beta, cfg, "beta")?.unwrap_or(0.5);
    if !algorithm.is_sgd() {
        if !(iota > 0.0 && iota < 1.0) {
            return Err(format!("invalid value for --iota: must lie in (0, 1), got {iota}"));
        }
        if !(alpha_bar > 0.0 && alpha_bar.is_finite()) {
            return Err(format!("invalid value for --alpha-bar: must be positive, got {alpha_bar}"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(format!("invalid value for --beta: must lie in (0, 1), got {beta}"));
        }
    }
    let iters: Option<u64> = pick(args.iters, cfg, "iters")?;
    let seconds: Option<f64> = if args.iters.is_some() { None } else { pick(args.seconds, cfg, "seconds")? };
    let budget = match (iters, seconds) {
        (Some(n), None) => Budget::Iterations(n),
        (None, Some(s)) if s >= 0.0 && s.is_finite() => Budget::Seconds(s),
        (None, Some(s)) => return Err(format!("invalid value for --seconds: {s}")),
        (Some(_), Some(_)) => return Err("--iters and --seconds are mutually exclusive".into()),
        (None, None) => return Err("missing budget: pass --iters or --seconds".into()),
    };
    let trace_every: Option<u64> = pick(args.trace_every, cfg, "trace-every")?;
    if trace_every == Some(0) {
        return Err("invalid value for --trace-every: must be >= 1".into());
    }
    let phi_mode = match args.phi.map(|p| format!("{p:?}").to_lowercase()).or(cfg.raw("phi").map(str::to_string)).as_deref() {
        None | Some("constant") => PhiMode::Constant,
        Some("adaptive") => PhiMode::Adaptive,
        Some("bound") => PhiMode::AdaptiveBound,
        Some(other) => return Err(format!("invalid value for --phi: {other}")),
    };
    let frozen = args.frozen_clock || cfg.get::<bool>("frozen-clock")?.unwrap_or(false);
    if frozen && matches!(budget, Budget::Seconds(_)) {
        return Err("--frozen-clock needs --iters".into());
    }
    let output = args.out.clone().or(cfg.raw("out").map(PathBuf::from));
    let seed = pick(args.seed, cfg, "seed")?.unwrap_or(0);
    Ok((
        name,
        ExperimentSpec {
            algorithm,
            k,
            lambda,
            big_k,
            schedule_offset,
            iota,
            alpha_bar,
            beta,
            seed,
            budget,
            trace_every,
            phi_mode,
            clock: if frozen { ClockMode::Frozen } else { ClockMode::Wall },
            output,
        },
    ))
}

fn execute(cli: Cli) -> Result<(), String> {
    let core = |e: wlra_core::WlraError| e.to_string();
    match cli.command {
        Command::Ingest { input, out } => {
            let obs = input.load()?;
            write_triplets(&out, &obs).map_err(core)?;
            eprintln!("{}x{} with {} observations (density {:.6})", obs.rows(), obs.cols(), obs.len(), obs.density());
        }
        Command::Sample { input, sample_rows, sample_cols, seed, out } => {
            let obs = input.load()?;
            let sub = sample_submatrix(&obs, sample_rows, sample_cols, seed).map_err(core)?;
            write_triplets(&out, &sub).map_err(core)?;
            eprintln!("{}x{} with {} observations", sub.rows(), sub.cols(), sub.len());
        }
        Command::Synth { rows, cols, rank, noise, observe, seed, out } => {
            let spec = SynthSpec { rows, cols, rank, noise, observe_prob: observe, seed };
            let (obs, _) = synthetic(&spec).map_err(core)?;
            write_triplets(&out, &obs).map_err(core)?;
            eprintln!("{rows}x{cols} with {} observations", obs.len());
        }
        Command::InitSvd { input, k } => {
            let obs = input.load()?;
            let data = obs.to_problem(k).map_err(core)?;
            let filled = fill_missing_column_mean(&data);
            let s = svd(&filled).map_err(core)?.s;
            let (point, _) = truncated_svd_init(&filled, k).map_err(core)?;
            let (_, tail) = eckart_young_best(&filled, k).map_err(core)?;
            let cost = wlra_core::model::cost_unregularized(&point, &data).map_err(core)?;
            let tol = s[0] * f64::EPSILON * filled.nrows().max(filled.ncols()) as f64;
            let mut out = std::io::stdout().lock();
            let w = |e: std::io::Error| e.to_string();
            writeln!(out, "rank_of_imputed,{}", s.iter().filter(|&&v| v > tol).count()).map_err(w)?;
            writeln!(out, "cost_unregularized,{cost:?}").map_err(w)?;
            writeln!(out, "imputed_residual,{tail:?}").map_err(w)?;
            for (i, v) in point.x.iter().enumerate() {
                writeln!(out, "s{},{v:?}", i + 1).map_err(w)?;
            }
        }
        Command::Run { input, run } => {
            let cfg = match &run.config {
                Some(p) => ConfigFile::load(p)?,
                None => ConfigFile::default(),
            };
            let mut warnings = Vec::new();
            let (_, spec) = resolve(&run, &cfg, &mut warnings)?;
            warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            let obs = input.load()?;
            let res = run_experiment(&spec, &obs).map_err(core)?;
            if spec.output.is_none() {
                write_trace(&mut std::io::stdout().lock(), &res.trace).map_err(core)?;
            }
            let last = res.trace.last().expect("trace has a t = 0 record");
            eprintln!("{}: t = {}, cost {:.6e} (initial {:.6e})", spec.algorithm, last.t, last.cost_unregularized, res.initial_cost);
        }
        Command::Compare { input, specs, bin, horizon, out } => {
            let obs = input.load()?;
            let mut runs = Vec::new();
            for path in &specs {
                let cfg = ConfigFile::load(path)?;
                let mut warnings = Vec::new();
                let (name, spec) = resolve(&RunArgs::default(), &cfg, &mut warnings).map_err(|e| format!("{}: {e}", path.display()))?;
                warnings.iter().for_each(|w| eprintln!("warning: {}: {w}", path.display()));
                runs.push((name, spec));
            }
            let align = match (bin, horizon) {
                (Some(bin), Some(horizon)) => Alignment::Time { bin, horizon },
                (Some(_), None) => return Err("--bin needs --horizon".into()),
                _ => Alignment::Iteration,
            };
            let table = compare(&runs, &obs, align).map_err(core)?;
            match out {
                Some(p) => table.write_csv(&p).map_err(core)?,
                None => table.write(&mut std::io::stdout().lock()).map_err(core)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
