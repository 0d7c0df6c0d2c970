//! Geometry of the product manifold `V_k(R^m) x R^k x V_k(R^n)`.
//!
//! A point `(U, x, V)` parametrizes the rank-at-most-`k` matrix `U diag(x) V^T`.
//! Tangent vectors at a Stiefel point `X` are the matrices `Z` with
//! `X^T Z + Z^T X = 0`. The metric is the one inherited from the ambient
//! Frobenius inner product, and the retraction is the QR-based map
//! `(U, x, V) + (dU, dx, dV) -> (qf(U + dU), x + dx, qf(V + dV))`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, WlraError};

pub type Matrix = Array2<f64>;
pub type Vector = Array1<f64>;

/// Tolerance on `||X^T X - I||_F` accepted for a Stiefel point.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
/// Gram-Schmidt pivots below this fraction of the column norm are treated as zero.
pub const RANK_TOL: f64 = 1e-12;
/// A second Gram-Schmidt pass runs whenever the first leaves a larger defect.
const REORTH_TRIGGER: f64 = 1e-12;

/// `||X^T X - I||_F`.
pub fn orthonormality_defect(x: ArrayView2<'_, f64>) -> f64 {
    let gram = x.t().dot(&x);
    let k = gram.nrows();
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = gram[[i, j]] - target;
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// `||X^T Z + Z^T X||_F`, zero exactly when `Z` is tangent at `X`.
pub fn skew_defect(x: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>) -> f64 {
    let xtz = x.t().dot(&z);
    let sym = &xtz + &xtz.t();
    frobenius(sym.view())
}

pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn frobenius_inner(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| p * q).sum()
}

fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(WlraError::ShapeMismatch(format!("{what}: expected {}x{}, got {}x{}", want.0, want.1, got.0, got.1)));
    }
    Ok(())
}

/// An `n x k` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    matrix: Matrix,
}

impl StiefelPoint {
    /// Wraps `matrix`, checking `k <= n` and the orthonormality defect.
    pub fn new(matrix: Matrix) -> Result<Self> {
        let (n, k) = matrix.dim();
        if k > n {
            return Err(WlraError::ShapeMismatch(format!("Stiefel point needs k <= n, got {n}x{k}")));
        }
        let defect = orthonormality_defect(matrix.view());
        if defect > ORTHONORMALITY_TOL {
            return Err(WlraError::InvalidData(format!("columns not orthonormal: defect {defect:.3e}")));
        }
        Ok(Self { matrix })
    }

    pub(crate) fn from_orthonormal(matrix: Matrix) -> Self {
        Self { matrix }
    }

    /// The first `k` columns of `I_n`.
    pub fn identity_columns(n: usize, k: usize) -> Result<Self> {
        if k > n {
            return Err(WlraError::ShapeMismatch(format!("Stiefel point needs k <= n, got {n}x{k}")));
        }
        let mut m = Matrix::zeros((n, k));
        for i in 0..k {
            m[[i, i]] = 1.0;
        }
        Ok(Self { matrix: m })
    }

    /// A random point: `qf` of a standard Gaussian matrix.
    pub fn random<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Self> {
        if k > n {
            return Err(WlraError::ShapeMismatch(format!("Stiefel point needs k <= n, got {n}x{k}")));
        }
        loop {
            let c = Matrix::from_shape_fn((n, k), |_| rng.sample(StandardNormal));
            match qf(&c) {
                Ok(q) => return Ok(q),
                Err(WlraError::RankDeficient { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    /// Ambient dimension `n`.
    pub fn ambient_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn defect(&self) -> f64 {
        orthonormality_defect(self.matrix.view())
    }

    /// Random unit-free tangent vector: the projection of a Gaussian matrix.
    pub fn random_tangent<R: Rng + ?Sized>(&self, rng: &mut R) -> TangentVector {
        let xi = Matrix::from_shape_fn(self.matrix.dim(), |_| rng.sample(StandardNormal));
        project_unchecked(self, xi)
    }
}

/// A tangent vector to a Stiefel manifold. The base point is not stored;
/// constructors that accept an arbitrary matrix check it against a base.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    direction: Matrix,
}

impl TangentVector {
    /// Checks the skew condition against `base`.
    pub fn at(base: &StiefelPoint, direction: Matrix) -> Result<Self> {
        check_shape("tangent direction", direction.dim(), base.matrix.dim())?;
        let defect = skew_defect(base.matrix.view(), direction.view());
        if defect > ORTHONORMALITY_TOL * (1.0 + frobenius(direction.view())) {
            return Err(WlraError::InvalidData(format!("direction is not tangent: skew defect {defect:.3e}")));
        }
        Ok(Self { direction })
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self { direction: Matrix::zeros((n, k)) }
    }

    pub fn direction(&self) -> &Matrix {
        &self.direction
    }

    pub fn into_matrix(self) -> Matrix {
        self.direction
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { direction: &self.direction * s }
    }

    /// `self + s * other`; both must be based at the same point.
    pub fn add_scaled(&self, other: &TangentVector, s: f64) -> Self {
        let mut direction = self.direction.clone();
        direction.scaled_add(s, &other.direction);
        Self { direction }
    }

    pub fn inner(&self, other: &TangentVector) -> f64 {
        frobenius_inner(self.direction.view(), other.direction.view())
    }

    pub fn norm_sq(&self) -> f64 {
        self.direction.iter().map(|v| v * v).sum()
    }
}

/// Iterate on `V_k(R^m) x R^k x V_k(R^n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPoint {
    pub u: StiefelPoint,
    pub x: Vector,
    pub v: StiefelPoint,
}

impl ProductPoint {
    pub fn new(u: StiefelPoint, x: Vector, v: StiefelPoint) -> Result<Self> {
        let k = x.len();
        if u.rank() != k || v.rank() != k {
            return Err(WlraError::ShapeMismatch(format!(
                "product point ranks differ: U has {}, x has {}, V has {}",
                u.rank(),
                k,
                v.rank()
            )));
        }
        Ok(Self { u, x, v })
    }

    /// `(m, n, k)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.u.ambient_dim(), self.v.ambient_dim(), self.x.len())
    }

    /// `p_{i,j} = sum_l u_{i,l} x_l v_{j,l}` without forming `P`.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let u = self.u.matrix.row(i);
        let v = self.v.matrix.row(j);
        let mut acc = 0.0;
        for l in 0..self.x.len() {
            acc += u[l] * self.x[l] * v[l];
        }
        acc
    }

    /// Confinement value `||x||^2`.
    pub fn rho(&self) -> f64 {
        self.x.dot(&self.x)
    }

    pub fn random<R: Rng + ?Sized>(m: usize, n: usize, k: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let u = StiefelPoint::random(m, k, rng)?;
        let v = StiefelPoint::random(n, k, rng)?;
        let x = Vector::from_shape_fn(k, |_| scale * rng.sample::<f64, _>(StandardNormal));
        Ok(Self { u, x, v })
    }

    pub fn random_tangent<R: Rng + ?Sized>(&self, rng: &mut R) -> ProductTangent {
        ProductTangent {
            du: self.u.random_tangent(rng),
            dx: Vector::from_shape_fn(self.x.len(), |_| rng.sample(StandardNormal)),
            dv: self.v.random_tangent(rng),
        }
    }
}

/// Tangent vector `(dU, dx, dV)` to the product manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductTangent {
    pub du: TangentVector,
    pub dx: Vector,
    pub dv: TangentVector,
}

impl ProductTangent {
    pub fn zeros(m: usize, n: usize, k: usize) -> Self {
        Self { du: TangentVector::zeros(m, k), dx: Vector::zeros(k), dv: TangentVector::zeros(n, k) }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { du: self.du.scaled(s), dx: &self.dx * s, dv: self.dv.scaled(s) }
    }

    /// `self + s * other`; both must be based at the same point.
    pub fn add_scaled(&self, other: &ProductTangent, s: f64) -> Self {
        let mut dx = self.dx.clone();
        dx.scaled_add(s, &other.dx);
        Self { du: self.du.add_scaled(&other.du, s), dx, dv: self.dv.add_scaled(&other.dv, s) }
    }

    /// Product metric: sum of the slot-wise Frobenius inner products.
    pub fn inner(&self, other: &ProductTangent) -> f64 {
        self.du.inner(&other.du) + self.dx.dot(&other.dx) + self.dv.inner(&other.dv)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Largest entrywise difference across all three slots.
    pub fn max_abs_diff(&self, other: &ProductTangent) -> f64 {
        let a = self.du.direction.iter().zip(other.du.direction.iter()).map(|(p, q)| (p - q).abs());
        let b = self.dx.iter().zip(other.dx.iter()).map(|(p, q)| (p - q).abs());
        let c = self.dv.direction.iter().zip(other.dv.direction.iter()).map(|(p, q)| (p - q).abs());
        a.chain(b).chain(c).fold(0.0, f64::max)
    }
}

/// Orthonormal factor of the QR decomposition `C = QR` with `R` upper
/// triangular and positive on its diagonal.
///
/// Modified Gram-Schmidt, followed by a second pass when the first one leaves
/// an orthonormality defect above `1e-12`.
pub fn qf(c: &Matrix) -> Result<StiefelPoint> {
    let (n, k) = c.dim();
    if k > n {
        return Err(WlraError::ShapeMismatch(format!("qf needs at least as many rows as columns, got {n}x{k}")));
    }
    // Rows of `qt` are the columns of C, which keeps the inner loops contiguous.
    let mut qt = c.t().as_standard_layout().into_owned();
    gram_schmidt_rows(&mut qt)?;
    if orthonormality_defect(qt.t()) > REORTH_TRIGGER {
        gram_schmidt_rows(&mut qt)?;
    }
    Ok(StiefelPoint::from_orthonormal(qt.reversed_axes().as_standard_layout().into_owned()))
}

fn gram_schmidt_rows(qt: &mut Matrix) -> Result<()> {
    let k = qt.nrows();
    for j in 0..k {
        let col_norm = qt.row(j).dot(&qt.row(j)).sqrt();
        for i in 0..j {
            let (done, mut rest) = qt.view_mut().split_at(Axis(0), j);
            let qi = done.row(i);
            let mut vj = rest.row_mut(0);
            let r = qi.dot(&vj);
            vj.scaled_add(-r, &qi);
        }
        let pivot = qt.row(j).dot(&qt.row(j)).sqrt();
        if pivot == 0.0 || pivot <= RANK_TOL * col_norm || !pivot.is_finite() {
            return Err(WlraError::RankDeficient { column: j, pivot });
        }
        qt.row_mut(j).mapv_inplace(|v| v / pivot);
    }
    Ok(())
}

fn project_unchecked(x: &StiefelPoint, xi: Matrix) -> TangentVector {
    let xm = &x.matrix;
    let xtxi = xm.t().dot(&xi);
    let sym = &xtxi + &xtxi.t();
    let mut out = xi;
    out.scaled_add(-0.5, &xm.dot(&sym));
    TangentVector { direction: out }
}

/// Orthogonal projection onto the tangent space at `x`:
/// `xi - X (X^T xi + xi^T X) / 2`.
pub fn tangent_project(x: &StiefelPoint, xi: &Matrix) -> Result<TangentVector> {
    check_shape("tangent_project", xi.dim(), x.matrix.dim())?;
    Ok(project_unchecked(x, xi.clone()))
}

/// Same as [`tangent_project`] but consumes the ambient matrix.
pub fn tangent_project_owned(x: &StiefelPoint, xi: Matrix) -> Result<TangentVector> {
    check_shape("tangent_project", xi.dim(), x.matrix.dim())?;
    Ok(project_unchecked(x, xi))
}

/// QR retraction on the product manifold.
pub fn retract(p: &ProductPoint, v: &ProductTangent) -> Result<ProductPoint> {
    retract_scaled(p, v, 1.0)
}

/// `retract(p, s * v)` without materializing the scaled tangent.
pub fn retract_scaled(p: &ProductPoint, v: &ProductTangent, s: f64) -> Result<ProductPoint> {
    check_shape("retract dU", v.du.direction.dim(), p.u.matrix.dim())?;
    check_shape("retract dV", v.dv.direction.dim(), p.v.matrix.dim())?;
    if v.dx.len() != p.x.len() {
        return Err(WlraError::ShapeMismatch(format!("retract dx: expected length {}, got {}", p.x.len(), v.dx.len())));
    }
    let mut cu = p.u.matrix.clone();
    cu.scaled_add(s, &v.du.direction);
    let mut cv = p.v.matrix.clone();
    cv.scaled_add(s, &v.dv.direction);
    let mut x = p.x.clone();
    x.scaled_add(s, &v.dx);
    Ok(ProductPoint { u: qf(&cu)?, x, v: qf(&cv)? })
}

/// `U diag(x) V^T`.
pub fn assemble(p: &ProductPoint) -> Matrix {
    let ux = &p.u.matrix * &p.x.view().insert_axis(Axis(0));
    ux.dot(&p.v.matrix.t())
}
