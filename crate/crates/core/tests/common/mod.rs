#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wlra_core::data::{synthetic, SynthSpec};
use wlra_core::{FactorPair, Matrix, ProblemData};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random entries in `[-2, 2]`, random positive weights normalized to sum 1.
/// `keep >= 1` observes every cell.
pub fn weighted_instance(seed: u64, m: usize, n: usize, k: usize, keep: f64) -> ProblemData {
    let mut r = rng(seed);
    let mut cells = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if r.random::<f64>() < keep || (i == 0 && j == 0) {
                cells.push((i, j, r.random_range(-2.0..2.0), r.random_range(0.2..1.0)));
            }
        }
    }
    let total: f64 = cells.iter().map(|c| c.3).sum();
    for c in &mut cells {
        c.3 /= total;
    }
    let last = cells.len() - 1;
    let head: f64 = cells[..last].iter().map(|c| c.3).sum();
    cells[last].3 = 1.0 - head;
    ProblemData::new(m, n, k, cells).unwrap()
}

/// Binary-weight completion instance from a noisy low-rank ground truth.
pub fn completion_instance(seed: u64, m: usize, n: usize, rank: usize, k: usize, keep: f64) -> ProblemData {
    let spec = SynthSpec { rows: m, cols: n, rank, noise: 0.05, observe_prob: keep, seed };
    synthetic(&spec).unwrap().0.to_problem(k).unwrap()
}

pub fn random_pair(r: &mut ChaCha8Rng, m: usize, n: usize, k: usize, scale: f64) -> FactorPair {
    FactorPair::new(
        Matrix::from_shape_fn((m, k), |_| scale * r.random_range(-1.0..1.0)),
        Matrix::from_shape_fn((n, k), |_| scale * r.random_range(-1.0..1.0)),
    )
    .unwrap()
}
