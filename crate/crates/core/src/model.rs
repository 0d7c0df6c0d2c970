//! Weighted low-rank approximation problems: data, costs, sampling and gradients.
//!
//! Every sum below ranges over the observed support `Delta` only. Cells outside
//! it carry zero weight and never enter a cost or a gradient.

use std::collections::HashSet;

use ndarray::Axis;
use rand::Rng;
use rand_distr::{weighted::WeightedAliasIndex, Distribution};

use crate::error::{Result, WlraError};
use crate::stiefel::{tangent_project_owned, Matrix, ProductPoint, ProductTangent, Vector};

/// Tolerance on `sum w - 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One observed cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub a: f64,
    pub w: f64,
    /// `1 / w`, or `+inf` when `w == 0`.
    pub inv_w: f64,
}

/// Observed entries of `A`, weights on the same support, and the rank cap `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    m: usize,
    n: usize,
    k: usize,
    entries: Vec<Entry>,
}

impl ProblemData {
    /// `cells` holds `(row, col, a, w)`; order is preserved.
    pub fn new(m: usize, n: usize, k: usize, cells: impl IntoIterator<Item = (usize, usize, f64, f64)>) -> Result<Self> {
        if m == 0 || n == 0 || k == 0 {
            return Err(WlraError::InvalidDimensions(format!("m={m}, n={n}, k={k} must all be positive")));
        }
        if k > m.min(n) {
            return Err(WlraError::InvalidDimensions(format!("k={k} exceeds min(m, n)={}", m.min(n))));
        }
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        let mut total = 0.0;
        for (line, (row, col, a, w)) in cells.into_iter().enumerate() {
            if row >= m || col >= n {
                return Err(WlraError::IndexOutOfBounds { row, col, rows: m, cols: n });
            }
            if !seen.insert((row, col)) {
                return Err(WlraError::DuplicateEntry { row, col, line });
            }
            if !a.is_finite() {
                return Err(WlraError::InvalidData(format!("entry ({row}, {col}) is {a}")));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(WlraError::InvalidData(format!("weight at ({row}, {col}) is {w}, must be >= 0")));
            }
            total += w;
            entries.push(Entry { row, col, a, w, inv_w: 1.0 / w });
        }
        if entries.is_empty() {
            return Err(WlraError::EmptySupport);
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(WlraError::InvalidData(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { m, n, k, entries })
    }

    /// Dense `A` and `W`; zero weights mark missing cells.
    pub fn from_dense(a: &Matrix, w: &Matrix, k: usize) -> Result<Self> {
        if a.dim() != w.dim() {
            return Err(WlraError::ShapeMismatch(format!("A is {:?}, W is {:?}", a.dim(), w.dim())));
        }
        let (m, n) = a.dim();
        let cells = a.indexed_iter().filter(|&((i, j), _)| w[[i, j]] != 0.0).map(|((i, j), &v)| (i, j, v, w[[i, j]]));
        Self::new(m, n, k, cells)
    }

    /// Same observations with a different rank cap.
    pub fn with_rank(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.m.min(self.n) {
            return Err(WlraError::InvalidDimensions(format!("k={k} outside 1..={}", self.m.min(self.n))));
        }
        Ok(Self { k, ..self.clone() })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, idx: usize) -> &Entry {
        &self.entries[idx]
    }

    /// `|Delta|`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Smallest weight on the support.
    pub fn w0(&self) -> f64 {
        self.entries.iter().map(|e| e.w).fold(f64::INFINITY, f64::min)
    }

    /// Positive-weights mode needs every cell observed with `w > 0`; returns `w0`.
    pub fn require_positive_weights(&self) -> Result<f64> {
        for e in &self.entries {
            if e.w <= 0.0 {
                return Err(WlraError::NonPositiveWeight { row: e.row, col: e.col, weight: e.w });
            }
        }
        if self.entries.len() != self.m * self.n {
            let mut seen = vec![false; self.m * self.n];
            for e in &self.entries {
                seen[e.row * self.n + e.col] = true;
            }
            let missing = seen.iter().position(|s| !s).unwrap_or(0);
            return Err(WlraError::NonPositiveWeight { row: missing / self.n, col: missing % self.n, weight: 0.0 });
        }
        Ok(self.w0())
    }

    /// Dense `A` with zeros off the support.
    pub fn dense_a(&self) -> Matrix {
        let mut a = Matrix::zeros((self.m, self.n));
        for e in &self.entries {
            a[[e.row, e.col]] = e.a;
        }
        a
    }

    /// Dense `W` with zeros off the support.
    pub fn dense_w(&self) -> Matrix {
        let mut w = Matrix::zeros((self.m, self.n));
        for e in &self.entries {
            w[[e.row, e.col]] = e.w;
        }
        w
    }

    /// `||A||_F` over observed cells.
    pub fn a_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.a * e.a).sum::<f64>().sqrt()
    }
}

/// Regularization weight `lambda > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    lambda: f64,
}

impl Regularization {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(WlraError::InvalidParameter { name: "lambda", reason: format!("must be a positive number, got {lambda}") });
        }
        Ok(Self { lambda })
    }

    /// Positive-weights mode additionally needs `lambda < w0`.
    pub fn for_positive_weights(lambda: f64, w0: f64) -> Result<Self> {
        let r = Self::new(lambda)?;
        if lambda >= w0 {
            return Err(WlraError::LambdaOutOfRange { lambda, w0 });
        }
        Ok(r)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// A drawn cell; `entry` indexes [`ProblemData::entries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleIndex {
    pub row: usize,
    pub col: usize,
    pub entry: usize,
}

/// Draws `(i, j)` with probability `w_{i,j}` via an alias table built once.
#[derive(Debug, Clone)]
pub struct Sampler {
    positive: Vec<usize>,
    rows: Vec<(usize, usize)>,
    alias: Option<WeightedAliasIndex<f64>>,
}

impl Sampler {
    pub fn new(data: &ProblemData) -> Result<Self> {
        let positive: Vec<usize> = (0..data.len()).filter(|&i| data.entries[i].w > 0.0).collect();
        if positive.is_empty() {
            return Err(WlraError::EmptySupport);
        }
        let rows = positive.iter().map(|&i| (data.entries[i].row, data.entries[i].col)).collect();
        let alias = if positive.len() == 1 {
            None
        } else {
            let weights = positive.iter().map(|&i| data.entries[i].w).collect();
            Some(WeightedAliasIndex::new(weights).map_err(|e| WlraError::InvalidData(format!("alias table: {e}")))?)
        };
        Ok(Self { positive, rows, alias })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleIndex {
        let slot = match &self.alias {
            Some(a) => a.sample(rng),
            None => 0,
        };
        let (row, col) = self.rows[slot];
        SampleIndex { row, col, entry: self.positive[slot] }
    }
}

/// One-shot draw; builds the alias table on every call. Use [`Sampler`] in loops.
pub fn sample_index<R: Rng + ?Sized>(data: &ProblemData, rng: &mut R) -> Result<SampleIndex> {
    Ok(Sampler::new(data)?.sample(rng))
}

/// Euclidean iterate `(X, Y)` with `P = X Y^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub x: Matrix,
    pub y: Matrix,
}

impl FactorPair {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(WlraError::ShapeMismatch(format!("X has {} columns, Y has {}", x.ncols(), y.ncols())));
        }
        Ok(Self { x, y })
    }

    pub fn zeros(m: usize, n: usize, k: usize) -> Self {
        Self { x: Matrix::zeros((m, k)), y: Matrix::zeros((n, k)) }
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.x.row(i).dot(&self.y.row(j))
    }

    pub fn product(&self) -> Matrix {
        self.x.dot(&self.y.t())
    }

    pub fn inner(&self, other: &FactorPair) -> f64 {
        frob_inner(&self.x, &other.x) + frob_inner(&self.y, &other.y)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { x: &self.x * s, y: &self.y * s }
    }

    /// `self + s * d`.
    pub fn add_scaled(&self, d: &FactorPair, s: f64) -> Self {
        let mut x = self.x.clone();
        x.scaled_add(s, &d.x);
        let mut y = self.y.clone();
        y.scaled_add(s, &d.y);
        Self { x, y }
    }
}

fn frob_inner(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| p * q).sum()
}

fn frob_sq(a: &Matrix) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Anything that yields `p_{i,j}` on demand.
pub trait Reconstruction {
    fn dims(&self) -> (usize, usize);
    fn value(&self, i: usize, j: usize) -> f64;
}

impl Reconstruction for ProductPoint {
    fn dims(&self) -> (usize, usize) {
        (self.u.ambient_dim(), self.v.ambient_dim())
    }
    fn value(&self, i: usize, j: usize) -> f64 {
        self.entry(i, j)
    }
}

impl Reconstruction for FactorPair {
    fn dims(&self) -> (usize, usize) {
        (self.x.nrows(), self.y.nrows())
    }
    fn value(&self, i: usize, j: usize) -> f64 {
        self.entry(i, j)
    }
}

impl Reconstruction for Matrix {
    fn dims(&self) -> (usize, usize) {
        self.dim()
    }
    fn value(&self, i: usize, j: usize) -> f64 {
        self[[i, j]]
    }
}

fn check_dims(got: (usize, usize), data: &ProblemData) -> Result<()> {
    if got != (data.m, data.n) {
        return Err(WlraError::ShapeMismatch(format!("iterate is {}x{}, data is {}x{}", got.0, got.1, data.m, data.n)));
    }
    Ok(())
}

fn check_point(p: &ProductPoint, data: &ProblemData) -> Result<()> {
    check_dims(Reconstruction::dims(p), data)
}

fn check_pair(f: &FactorPair, data: &ProblemData) -> Result<()> {
    check_dims(Reconstruction::dims(f), data)?;
    if f.x.ncols() != f.y.ncols() {
        return Err(WlraError::ShapeMismatch(format!("X has {} columns, Y has {}", f.x.ncols(), f.y.ncols())));
    }
    Ok(())
}

/// `F^(P) = sum_Delta w (a - p)^2`.
pub fn cost_unregularized<R: Reconstruction + ?Sized>(p: &R, data: &ProblemData) -> Result<f64> {
    check_dims(p.dims(), data)?;
    Ok(data
        .entries
        .iter()
        .map(|e| {
            let r = e.a - p.value(e.row, e.col);
            e.w * r * r
        })
        .sum())
}

/// `G = F^ + lambda ||x||^2`.
pub fn cost_g(p: &ProductPoint, data: &ProblemData, reg: Regularization) -> Result<f64> {
    Ok(cost_unregularized(p, data)? + reg.lambda * p.rho())
}

/// `H = F^(X Y^T) + lambda (||X||^2 + ||Y||^2)`.
pub fn cost_h(f: &FactorPair, data: &ProblemData, reg: Regularization) -> Result<f64> {
    check_pair(f, data)?;
    Ok(cost_unregularized(f, data)? + reg.lambda * rho_euclidean(f))
}

/// Positive-weights objective `G^ = F^`; checks the weights.
pub fn cost_g_hat(p: &ProductPoint, data: &ProblemData) -> Result<f64> {
    data.require_positive_weights()?;
    cost_unregularized(p, data)
}

/// Confinement on the manifold, `||x||^2`.
pub fn confinement_rho(p: &ProductPoint) -> f64 {
    p.rho()
}

/// Confinement for factor pairs, `||X||^2 + ||Y||^2`.
pub fn rho_euclidean(f: &FactorPair) -> f64 {
    frob_sq(&f.x) + frob_sq(&f.y)
}

/// Per-sample `f^ = (a - p)^2`.
pub fn sample_f_hat<R: Reconstruction + ?Sized>(p: &R, data: &ProblemData, entry: usize) -> f64 {
    let e = &data.entries[entry];
    let r = e.a - p.value(e.row, e.col);
    r * r
}

/// Per-sample `g = (a - p)^2 + lambda ||x||^2`.
pub fn sample_g(p: &ProductPoint, data: &ProblemData, reg: Regularization, entry: usize) -> f64 {
    sample_f_hat(p, data, entry) + reg.lambda * p.rho()
}

/// Per-sample `h = (a - p)^2 + lambda (||X||^2 + ||Y||^2)`.
pub fn sample_h(f: &FactorPair, data: &ProblemData, reg: Regularization, entry: usize) -> f64 {
    sample_f_hat(f, data, entry) + reg.lambda * rho_euclidean(f)
}

/// Per-sample `g~ = (a - p)^2 - (lambda / w) p^2 + lambda ||x||^2`.
pub fn sample_g_tilde(p: &ProductPoint, data: &ProblemData, reg: Regularization, entry: usize) -> f64 {
    let e = &data.entries[entry];
    let pv = p.entry(e.row, e.col);
    let r = e.a - pv;
    r * r - reg.lambda * e.inv_w * pv * pv + reg.lambda * p.rho()
}

/// Shared shape of the manifold sample gradients: residual factor `r` in place of `a - p`.
fn manifold_sample_grad(p: &ProductPoint, row: usize, col: usize, r: f64, lambda: f64) -> Result<ProductTangent> {
    let (m, n, k) = p.dims();
    let u = p.u.matrix().row(row);
    let v = p.v.matrix().row(col);
    let mut gu = Matrix::zeros((m, k));
    let mut gv = Matrix::zeros((n, k));
    let mut gx = Vector::zeros(k);
    for l in 0..k {
        gu[[row, l]] = -2.0 * r * p.x[l] * v[l];
        gv[[col, l]] = -2.0 * r * p.x[l] * u[l];
        gx[l] = -2.0 * r * u[l] * v[l] + 2.0 * lambda * p.x[l];
    }
    Ok(ProductTangent { du: tangent_project_owned(&p.u, gu)?, dx: gx, dv: tangent_project_owned(&p.v, gv)? })
}

/// Riemannian gradient of `g_{eta,gamma}`.
pub fn stoch_grad_manifold(p: &ProductPoint, s: SampleIndex, data: &ProblemData, reg: Regularization) -> Result<ProductTangent> {
    check_point(p, data)?;
    let e = &data.entries[s.entry];
    let r = e.a - p.entry(e.row, e.col);
    manifold_sample_grad(p, e.row, e.col, r, reg.lambda)
}

/// Riemannian gradient of `g~_{eta,gamma}`: `a - p` becomes `a - (1 - lambda / w) p`.
pub fn stoch_grad_pw(p: &ProductPoint, s: SampleIndex, data: &ProblemData, reg: Regularization) -> Result<ProductTangent> {
    check_point(p, data)?;
    let w0 = data.require_positive_weights()?;
    if reg.lambda >= w0 {
        return Err(WlraError::LambdaOutOfRange { lambda: reg.lambda, w0 });
    }
    let e = &data.entries[s.entry];
    let r = pw_residual(e, p.entry(e.row, e.col), reg.lambda);
    manifold_sample_grad(p, e.row, e.col, r, reg.lambda)
}

#[inline]
pub(crate) fn pw_residual(e: &Entry, p: f64, lambda: f64) -> f64 {
    e.a - (1.0 - lambda * e.inv_w) * p
}

/// Riemannian gradient of `G`, accumulated over `Delta` in O(|Delta| k).
pub fn full_grad_manifold(p: &ProductPoint, data: &ProblemData, reg: Regularization) -> Result<ProductTangent> {
    check_point(p, data)?;
    let (m, n, k) = p.dims();
    let um = p.u.matrix();
    let vm = p.v.matrix();
    let mut gu = Matrix::zeros((m, k));
    let mut gv = Matrix::zeros((n, k));
    let mut gx = Vector::zeros(k);
    for e in &data.entries {
        let u = um.row(e.row);
        let v = vm.row(e.col);
        let mut pv = 0.0;
        for l in 0..k {
            pv += u[l] * p.x[l] * v[l];
        }
        let c = -2.0 * e.w * (e.a - pv);
        for l in 0..k {
            gu[[e.row, l]] += c * p.x[l] * v[l];
            gv[[e.col, l]] += c * p.x[l] * u[l];
            gx[l] += c * u[l] * v[l];
        }
    }
    gx.scaled_add(2.0 * reg.lambda, &p.x);
    Ok(ProductTangent { du: tangent_project_owned(&p.u, gu)?, dx: gx, dv: tangent_project_owned(&p.v, gv)? })
}

/// Riemannian gradient of `G^` through dense products with `M = W . (A - P)`.
pub fn full_grad_pw(p: &ProductPoint, data: &ProblemData) -> Result<ProductTangent> {
    check_point(p, data)?;
    data.require_positive_weights()?;
    let pm = crate::stiefel::assemble(p);
    let mut neg2m = Matrix::zeros((data.m, data.n));
    for e in &data.entries {
        neg2m[[e.row, e.col]] = -2.0 * e.w * (e.a - pm[[e.row, e.col]]);
    }
    let xrow = p.x.view().insert_axis(Axis(0));
    let vx = p.v.matrix() * &xrow;
    let ux = p.u.matrix() * &xrow;
    let gu = neg2m.dot(&vx);
    let gv = neg2m.t().dot(&ux);
    let core = p.u.matrix().t().dot(&neg2m).dot(p.v.matrix());
    let gx = core.diag().to_owned();
    Ok(ProductTangent { du: tangent_project_owned(&p.u, gu)?, dx: gx, dv: tangent_project_owned(&p.v, gv)? })
}

/// Euclidean gradient of `h_{eta,gamma}`.
pub fn stoch_grad_euclidean(f: &FactorPair, s: SampleIndex, data: &ProblemData, reg: Regularization) -> Result<FactorPair> {
    check_pair(f, data)?;
    let e = &data.entries[s.entry];
    let r = e.a - f.entry(e.row, e.col);
    let mut gx = &f.x * (2.0 * reg.lambda);
    let mut gy = &f.y * (2.0 * reg.lambda);
    let k = f.x.ncols();
    for l in 0..k {
        gx[[e.row, l]] += -2.0 * r * f.y[[e.col, l]];
        gy[[e.col, l]] += -2.0 * r * f.x[[e.row, l]];
    }
    Ok(FactorPair { x: gx, y: gy })
}

/// Euclidean gradient of `H`: `-2 (W . (A - P)) Y + 2 lambda X` and its `Y` analogue.
pub fn full_grad_euclidean(f: &FactorPair, data: &ProblemData, reg: Regularization) -> Result<FactorPair> {
    check_pair(f, data)?;
    let mut gx = &f.x * (2.0 * reg.lambda);
    let mut gy = &f.y * (2.0 * reg.lambda);
    let k = f.x.ncols();
    for e in &data.entries {
        let c = -2.0 * e.w * (e.a - f.entry(e.row, e.col));
        for l in 0..k {
            gx[[e.row, l]] += c * f.y[[e.col, l]];
            gy[[e.col, l]] += c * f.x[[e.row, l]];
        }
    }
    Ok(FactorPair { x: gx, y: gy })
}

/// `<grad rho, grad g_{eta,gamma}> = -4 (a - p) p + 4 lambda ||x||^2`.
pub fn confinement_inner_manifold(p: &ProductPoint, data: &ProblemData, reg: Regularization, entry: usize) -> f64 {
    let e = &data.entries[entry];
    let pv = p.entry(e.row, e.col);
    -4.0 * (e.a - pv) * pv + 4.0 * reg.lambda * p.rho()
}

/// `<grad rho, grad h_{eta,gamma}> = -8 (a - p) p + 4 lambda (||X||^2 + ||Y||^2)`.
pub fn confinement_inner_euclidean(f: &FactorPair, data: &ProblemData, reg: Regularization, entry: usize) -> f64 {
    let e = &data.entries[entry];
    let pv = f.entry(e.row, e.col);
    -8.0 * (e.a - pv) * pv + 4.0 * reg.lambda * rho_euclidean(f)
}

/// `<grad rho, grad g~_{eta,gamma}> = -4 (a - (1 - lambda/w) p) p + 4 lambda ||x||^2`.
pub fn confinement_inner_pw(p: &ProductPoint, data: &ProblemData, reg: Regularization, entry: usize) -> f64 {
    let e = &data.entries[entry];
    let pv = p.entry(e.row, e.col);
    -4.0 * pw_residual(e, pv, reg.lambda) * pv + 4.0 * reg.lambda * p.rho()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stiefel::{assemble, StiefelPoint};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_data() -> ProblemData {
        ProblemData::new(1, 1, 1, [(0, 0, 2.0, 1.0)]).unwrap()
    }

    fn scalar_point(x: f64) -> ProductPoint {
        let one = StiefelPoint::new(array![[1.0]]).unwrap();
        ProductPoint::new(one.clone(), array![x], one).unwrap()
    }

    fn reg(l: f64) -> Regularization {
        Regularization::new(l).unwrap()
    }

    fn sample0() -> SampleIndex {
        SampleIndex { row: 0, col: 0, entry: 0 }
    }

    #[test]
    fn scalar_costs() {
        let d = scalar_data();
        assert_eq!(cost_unregularized(&array![[1.0]], &d).unwrap(), 1.0);
        assert_eq!(cost_unregularized(&array![[0.0]], &d).unwrap(), 4.0);
        assert_eq!(cost_g(&scalar_point(1.0), &d, reg(0.5)).unwrap(), 1.5);
        assert_eq!(cost_g(&scalar_point(0.0), &d, reg(0.5)).unwrap(), 4.0);
        let f = FactorPair::new(array![[1.0]], array![[1.0]]).unwrap();
        assert_eq!(cost_h(&f, &d, reg(0.5)).unwrap(), 2.0);
        assert_eq!(cost_h(&FactorPair::zeros(1, 1, 1), &d, reg(0.5)).unwrap(), 4.0);
    }

    #[test]
    fn scalar_gradients() {
        let d = scalar_data();
        let g = stoch_grad_manifold(&scalar_point(1.0), sample0(), &d, reg(0.5)).unwrap();
        assert_eq!(g.dx, array![-1.0]);
        assert_eq!(g.du.direction()[[0, 0]], 0.0);
        assert_eq!(g.dv.direction()[[0, 0]], 0.0);

        let f = FactorPair::new(array![[1.0]], array![[1.0]]).unwrap();
        let ge = stoch_grad_euclidean(&f, sample0(), &d, reg(0.5)).unwrap();
        assert_eq!((ge.x[[0, 0]], ge.y[[0, 0]]), (-1.0, -1.0));
        let ge = full_grad_euclidean(&f, &d, reg(0.5)).unwrap();
        assert_eq!((ge.x[[0, 0]], ge.y[[0, 0]]), (-1.0, -1.0));

        let gp = stoch_grad_pw(&scalar_point(1.0), sample0(), &d, reg(0.5)).unwrap();
        assert_eq!(gp.dx, array![-2.0]);
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let d = ProblemData::new(1, 1, 1, [(0, 0, 2.0, 1.0)]).unwrap();
        let p = scalar_point(2.0);
        let tiny = Regularization::new(f64::MIN_POSITIVE).unwrap();
        let g = stoch_grad_manifold(&p, sample0(), &d, tiny).unwrap();
        assert!(g.norm() < 1e-300);
        assert_eq!(cost_unregularized(&p, &d).unwrap(), 0.0);
        assert!(full_grad_pw(&p, &d).unwrap().norm() == 0.0);
    }

    #[test]
    fn pw_rejects_boundary_lambda_and_missing_cells() {
        let d = scalar_data();
        assert!(matches!(stoch_grad_pw(&scalar_point(1.0), sample0(), &d, reg(1.0)), Err(WlraError::LambdaOutOfRange { .. })));
        assert!(matches!(Regularization::for_positive_weights(1.0, 1.0), Err(WlraError::LambdaOutOfRange { .. })));
        let sparse = ProblemData::new(2, 1, 1, [(0, 0, 1.0, 1.0)]).unwrap();
        assert!(matches!(sparse.require_positive_weights(), Err(WlraError::NonPositiveWeight { row: 1, col: 0, .. })));
    }

    #[test]
    fn data_validation() {
        assert!(matches!(ProblemData::new(2, 2, 3, [(0, 0, 1.0, 1.0)]), Err(WlraError::InvalidDimensions(_))));
        assert!(matches!(ProblemData::new(2, 2, 1, [(0, 0, 1.0, 0.5), (0, 0, 1.0, 0.5)]), Err(WlraError::DuplicateEntry { .. })));
        assert!(matches!(ProblemData::new(2, 2, 1, [(2, 0, 1.0, 1.0)]), Err(WlraError::IndexOutOfBounds { .. })));
        assert!(ProblemData::new(2, 2, 1, [(0, 0, 1.0, 0.4)]).is_err());
        assert!(ProblemData::new(2, 2, 1, [(0, 0, 1.0, -0.5), (1, 1, 1.0, 1.5)]).is_err());
        assert!(matches!(ProblemData::new(2, 2, 1, Vec::new()), Err(WlraError::EmptySupport)));
        assert!(Regularization::new(0.0).is_err());
        assert!(Regularization::new(-1.0).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let d = scalar_data();
        assert!(matches!(cost_unregularized(&Matrix::zeros((2, 1)), &d), Err(WlraError::ShapeMismatch(_))));
    }

    #[test]
    fn sampler_single_entry_and_determinism() {
        let d = ProblemData::new(2, 2, 1, [(0, 0, 1.0, 0.0), (1, 1, 3.0, 1.0)]).unwrap();
        let s = Sampler::new(&d).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(s.sample(&mut r), SampleIndex { row: 1, col: 1, entry: 1 });
        }

        let d = ProblemData::new(2, 2, 1, (0..4).map(|i| (i / 2, i % 2, 1.0, 0.25))).unwrap();
        let s = Sampler::new(&d).unwrap();
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| s.sample(&mut r).entry).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn sampler_frequencies_pass_chi_square() {
        let d = ProblemData::new(2, 2, 1, (0..4).map(|i| (i / 2, i % 2, 1.0, 0.25))).unwrap();
        let s = Sampler::new(&d).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(2024);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[s.sample(&mut r).entry] += 1;
        }
        let expected = draws as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 3 degrees of freedom, upper 0.001 quantile.
        assert!(chi2 < 16.266, "chi2 = {chi2}, counts {counts:?}");
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() <= 0.01);
        }
    }

    #[test]
    fn rho_matches_assembled_norm() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let p = ProductPoint::random(5, 4, 2, 2.0, &mut r).unwrap();
        let a = assemble(&p);
        assert!((confinement_rho(&p) - a.iter().map(|v| v * v).sum::<f64>()).abs() <= 1e-10);
        assert_eq!(confinement_rho(&scalar_point(5.0)), 25.0);
        let two = ProductPoint::new(
            StiefelPoint::identity_columns(2, 2).unwrap(),
            array![3.0, 4.0],
            StiefelPoint::identity_columns(2, 2).unwrap(),
        )
        .unwrap();
        assert_eq!(confinement_rho(&two), 25.0);
        assert_eq!(rho_euclidean(&FactorPair::zeros(3, 2, 1)), 0.0);
    }

    fn random_data(seed: u64, m: usize, n: usize, k: usize, keep: f64) -> ProblemData {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut cells = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if r.random::<f64>() < keep || (i == 0 && j == 0) {
                    cells.push((i, j, r.random_range(-2.0..2.0), r.random_range(0.1..1.0)));
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

    #[test]
    fn cost_g_matches_assembled_form() {
        let d = random_data(4, 6, 5, 2, 0.6);
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let p = ProductPoint::random(6, 5, 2, 1.5, &mut r).unwrap();
        let a = assemble(&p);
        let lhs = cost_g(&p, &d, reg(0.3)).unwrap();
        let rhs = cost_unregularized(&a, &d).unwrap() + 0.3 * a.iter().map(|v| v * v).sum::<f64>();
        assert!((lhs - rhs).abs() <= 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn expectation_identities(seed in any::<u64>(), lambda in 1e-3f64..1.0) {
            let d = random_data(seed, 5, 4, 2, 0.7);
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let p = ProductPoint::random(5, 4, 2, 1.0, &mut r).unwrap();
            let f = FactorPair::new(
                Matrix::from_shape_fn((5, 2), |_| r.random_range(-1.0..1.0)),
                Matrix::from_shape_fn((4, 2), |_| r.random_range(-1.0..1.0)),
            ).unwrap();
            let rg = reg(lambda);
            let ws: Vec<f64> = d.entries().iter().map(|e| e.w).collect();
            let ex = |vals: Vec<f64>| vals.iter().zip(&ws).map(|(v, w)| v * w).sum::<f64>();
            let idx = 0..d.len();
            prop_assert!((ex(idx.clone().map(|i| sample_f_hat(&p, &d, i)).collect()) - cost_unregularized(&p, &d).unwrap()).abs() <= 1e-12);
            prop_assert!((ex(idx.clone().map(|i| sample_g(&p, &d, rg, i)).collect()) - cost_g(&p, &d, rg).unwrap()).abs() <= 1e-12);
            prop_assert!((ex(idx.map(|i| sample_h(&f, &d, rg, i)).collect()) - cost_h(&f, &d, rg).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn pw_expectation_identity(seed in any::<u64>()) {
            let d = random_data(seed, 4, 3, 2, 2.0);
            let w0 = d.require_positive_weights().unwrap();
            let rg = Regularization::for_positive_weights(w0 / 2.0, w0).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            let p = ProductPoint::random(4, 3, 2, 1.0, &mut r).unwrap();
            let lhs: f64 = (0..d.len()).map(|i| d.entry(i).w * sample_g_tilde(&p, &d, rg, i)).sum();
            prop_assert!((lhs - cost_g_hat(&p, &d).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn confinement_sign_on_sphere(seed in any::<u64>(), lambda in 1e-3f64..1.0) {
            let d = random_data(seed, 5, 4, 2, 0.6);
            let alpha = d.entries().iter().map(|e| e.a * e.a).fold(0.0, f64::max);
            let rg = reg(lambda);
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut p = ProductPoint::random(5, 4, 2, 1.0, &mut r).unwrap();
            let rho0 = alpha / (4.0 * lambda);
            let scale = (rho0 / p.rho()).sqrt();
            p.x *= scale;
            let mut f = FactorPair::new(
                Matrix::from_shape_fn((5, 2), |_| r.random_range(-1.0..1.0)),
                Matrix::from_shape_fn((4, 2), |_| r.random_range(-1.0..1.0)),
            ).unwrap();
            let fs = (alpha / (2.0 * lambda) / rho_euclidean(&f)).sqrt();
            f = f.scaled(fs);
            for i in 0..d.len() {
                let cm = confinement_inner_manifold(&p, &d, rg, i);
                prop_assert!(cm >= -1e-9 * (1.0 + rho0), "manifold inner {cm}");
                let ce = confinement_inner_euclidean(&f, &d, rg, i);
                prop_assert!(ce >= -1e-9 * (1.0 + rho0), "euclidean inner {ce}");

                // Closed form agrees with the inner product of the actual gradients.
                let s = SampleIndex { row: d.entry(i).row, col: d.entry(i).col, entry: i };
                let g = stoch_grad_manifold(&p, s, &d, rg).unwrap();
                let direct = (&p.x * 2.0).dot(&g.dx);
                prop_assert!((direct - cm).abs() <= 1e-9 * (1.0 + cm.abs()));
                let ge = stoch_grad_euclidean(&f, s, &d, rg).unwrap();
                let direct = f.scaled(2.0).inner(&ge);
                prop_assert!((direct - ce).abs() <= 1e-9 * (1.0 + ce.abs()));
            }
        }

        #[test]
        fn gradients_are_tangent(seed in any::<u64>()) {
            let d = random_data(seed, 6, 5, 3, 0.5);
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let p = ProductPoint::random(6, 5, 3, 1.0, &mut r).unwrap();
            let g = full_grad_manifold(&p, &d, reg(0.1)).unwrap();
            prop_assert!(crate::stiefel::skew_defect(p.u.matrix().view(), g.du.direction().view()) <= 1e-10);
            prop_assert!(crate::stiefel::skew_defect(p.v.matrix().view(), g.dv.direction().view()) <= 1e-10);
        }
    }
}
