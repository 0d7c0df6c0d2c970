//! Sparse observation files, submatrix sampling, weights, and synthetic instances.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, WlraError};
use crate::model::ProblemData;
use crate::stiefel::Matrix;

pub const TRIPLET_HEADER: &str = "row,col,value";

/// Observed cells of an `rows x cols` matrix, 0-based, without duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseObservations {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseObservations {
    pub fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (line, &(row, col, v)) in entries.iter().enumerate() {
            if row >= rows || col >= cols {
                return Err(WlraError::IndexOutOfBounds { row, col, rows, cols });
            }
            if !seen.insert((row, col)) {
                return Err(WlraError::DuplicateEntry { row, col, line });
            }
            if !v.is_finite() {
                return Err(WlraError::InvalidData(format!("value at ({row}, {col}) is {v}")));
            }
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `|Delta| / (rows cols)`.
    pub fn density(&self) -> f64 {
        self.entries.len() as f64 / (self.rows as f64 * self.cols as f64)
    }

    /// Problem with binary weights `1 / |Delta|` on the support.
    pub fn to_problem(&self, k: usize) -> Result<ProblemData> {
        let w = build_binary_weights(self)?;
        ProblemData::new(self.rows, self.cols, k, self.entries.iter().zip(w).map(|(&(i, j, a), w)| (i, j, a, w)))
    }
}

/// Index conventions for [`load_triplets`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Subtract 1 from both indices.
    pub one_based: bool,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
}

pub fn load_triplets(path: &Path, opts: LoadOptions) -> Result<SparseObservations> {
    let file = File::open(path).map_err(|e| WlraError::Io(format!("{}: {e}", path.display())))?;
    read_triplets(file, opts)
}

/// Parses `row,col,value` lines after the header. Line numbers in errors are
/// 1-based file lines, the header being line 1.
pub fn read_triplets<R: Read>(reader: R, opts: LoadOptions) -> Result<SparseObservations> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| WlraError::Parse { line: 1, message: e.to_string() })?;
    let names: Vec<&str> = header.iter().collect();
    if names != ["row", "col", "value"] {
        return Err(WlraError::Parse { line: 1, message: format!("expected header \"{TRIPLET_HEADER}\", got \"{}\"", names.join(",")) });
    }
    let shift = usize::from(opts.one_based);
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let (mut max_r, mut max_c) = (0usize, 0usize);
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| WlraError::Parse { line, message: e.to_string() })?;
        if rec.len() != 3 {
            return Err(WlraError::Parse { line, message: format!("expected 3 fields, got {}", rec.len()) });
        }
        let index = |field: &str, what: &str| -> Result<usize> {
            let v: usize = field
                .parse()
                .map_err(|_| WlraError::Parse { line, message: format!("{what} \"{field}\" is not a non-negative integer") })?;
            v.checked_sub(shift).ok_or(WlraError::Parse { line, message: format!("{what} 0 in a one-based file") })
        };
        let row = index(&rec[0], "row")?;
        let col = index(&rec[1], "col")?;
        let value: f64 = rec[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| WlraError::Parse { line, message: format!("value \"{}\" is not a finite number", &rec[2]) })?;
        if !seen.insert((row, col)) {
            return Err(WlraError::DuplicateEntry { row, col, line });
        }
        max_r = max_r.max(row + 1);
        max_c = max_c.max(col + 1);
        entries.push((row, col, value));
    }
    let rows = opts.rows.unwrap_or(max_r);
    let cols = opts.cols.unwrap_or(max_c);
    if let Some(&(row, col, _)) = entries.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
        return Err(WlraError::IndexOutOfBounds { row, col, rows, cols });
    }
    if rows == 0 || cols == 0 {
        return Err(WlraError::InvalidDimensions(format!("{rows}x{cols} matrix")));
    }
    SparseObservations::new(rows, cols, entries)
}

/// Writes the header and one `row,col,value` line per entry, LF-terminated.
/// Values use the shortest representation that parses back exactly.
pub fn write_triplets(path: &Path, obs: &SparseObservations) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| WlraError::Io(format!("{}: {e}", path.display())))?);
    write_triplets_to(&mut w, obs)?;
    w.flush()?;
    Ok(())
}

pub fn write_triplets_to<W: Write>(w: &mut W, obs: &SparseObservations) -> Result<()> {
    writeln!(w, "{TRIPLET_HEADER}")?;
    for &(r, c, v) in &obs.entries {
        writeln!(w, "{r},{c},{v:?}")?;
    }
    Ok(())
}

/// Uniform row and column subsets without replacement, re-indexed densely in
/// increasing original order.
pub fn sample_submatrix(obs: &SparseObservations, rows: usize, cols: usize, seed: u64) -> Result<SparseObservations> {
    if rows == 0 || cols == 0 || rows > obs.rows || cols > obs.cols {
        return Err(WlraError::InvalidDimensions(format!("cannot take {rows}x{cols} from a {}x{} matrix", obs.rows, obs.cols)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, total: usize, take: usize| {
        let mut chosen = sample(rng, total, take).into_vec();
        chosen.sort_unstable();
        let mut map = vec![usize::MAX; total];
        for (new, &old) in chosen.iter().enumerate() {
            map[old] = new;
        }
        map
    };
    let rmap = pick(&mut rng, obs.rows, rows);
    let cmap = pick(&mut rng, obs.cols, cols);
    let entries = obs
        .entries
        .iter()
        .filter(|&&(r, c, _)| rmap[r] != usize::MAX && cmap[c] != usize::MAX)
        .map(|&(r, c, v)| (rmap[r], cmap[c], v))
        .collect();
    SparseObservations::new(rows, cols, entries)
}

/// `1 / |Delta|` per observed cell, in entry order; the last weight absorbs the
/// rounding so the sequential sum is 1.
pub fn build_binary_weights(obs: &SparseObservations) -> Result<Vec<f64>> {
    let n = obs.len();
    if n == 0 {
        return Err(WlraError::EmptySupport);
    }
    let w = 1.0 / n as f64;
    let mut out = vec![w; n];
    let head: f64 = out[..n - 1].iter().sum();
    out[n - 1] = 1.0 - head;
    Ok(out)
}

/// Low-rank ground truth plus noise, observed through a Bernoulli mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub noise: f64,
    pub observe_prob: f64,
    pub seed: u64,
}

/// `A = U* V*^T / sqrt(r) + noise * N(0, 1)`, with `U*`, `V*` standard Gaussian,
/// so entries have unit variance before noise. Returns the observations and the
/// noiseless dense truth. At least one cell is always observed.
pub fn synthetic(spec: &SynthSpec) -> Result<(SparseObservations, Matrix)> {
    let SynthSpec { rows, cols, rank, noise, observe_prob, seed } = *spec;
    if rows == 0 || cols == 0 || rank == 0 || rank > rows.min(cols) {
        return Err(WlraError::InvalidDimensions(format!("{rows}x{cols} with rank {rank}")));
    }
    if !(0.0..=1.0).contains(&observe_prob) || observe_prob == 0.0 {
        return Err(WlraError::InvalidParameter { name: "observe_prob", reason: format!("must lie in (0, 1], got {observe_prob}") });
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(WlraError::InvalidParameter { name: "noise", reason: format!("must be >= 0, got {noise}") });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Matrix::from_shape_fn((rows, rank), |_| rng.sample(StandardNormal));
    let v = Matrix::from_shape_fn((cols, rank), |_| rng.sample(StandardNormal));
    let truth = u.dot(&v.t()) / (rank as f64).sqrt();
    let mut entries = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let keep = rng.random::<f64>() < observe_prob;
            let eps: f64 = rng.sample(StandardNormal);
            if keep {
                entries.push((i, j, truth[[i, j]] + noise * eps));
            }
        }
    }
    if entries.is_empty() {
        entries.push((0, 0, truth[[0, 0]]));
    }
    Ok((SparseObservations::new(rows, cols, entries)?, truth))
}
