//! Dense SVD by one-sided Jacobi rotations, column-mean imputation, and the
//! truncated-SVD initializer that doubles as the unweighted optimum.

use ndarray::{s, Axis};

use crate::error::{Result, WlraError};
use crate::model::{FactorPair, ProblemData};
use crate::stiefel::{frobenius, Matrix, ProductPoint, StiefelPoint, Vector};

/// Rotation threshold on `|<a_i, a_j>| / (||a_i|| ||a_j||)`.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 60;

/// Thin SVD `A = U diag(s) V^T` with `r = min(m, n)` columns, `s` descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: StiefelPoint,
    pub s: Vector,
    pub v: StiefelPoint,
}

impl SvdResult {
    /// `U[:, ..k] diag(s[..k]) V[:, ..k]^T`.
    pub fn reconstruct(&self, k: usize) -> Matrix {
        let k = k.min(self.s.len());
        let u = self.u.matrix().slice(s![.., ..k]);
        let v = self.v.matrix().slice(s![.., ..k]);
        let us = &u * &self.s.slice(s![..k]).insert_axis(Axis(0));
        us.dot(&v.t())
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Err(WlraError::InvalidDimensions(format!("cannot factor a {m}x{n} matrix")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(WlraError::InvalidData("matrix has non-finite entries".into()));
    }
    if m < n {
        let t = svd(&a.t().to_owned())?;
        return Ok(SvdResult { u: t.v, s: t.s, v: t.u });
    }
    // Rows of `w` are the columns of A being rotated; rows of `vt` accumulate V.
    let mut w = a.t().as_standard_layout().into_owned();
    let mut vt = Matrix::eye(n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (alpha, beta, gamma) = {
                    let (wi, wj) = (w.row(i), w.row(j));
                    (wi.dot(&wi), wj.dot(&wj), wi.dot(&wj))
                };
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate_rows(&mut w, i, j, c, sn);
                rotate_rows(&mut vt, i, j, c, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = w.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| norms[q].total_cmp(&norms[p]).then(p.cmp(&q)));
    let smax = norms[order[0]];
    let mut ut = Matrix::zeros((n, m));
    let mut vs = Matrix::zeros((n, n));
    let mut sv = Vector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        sv[dst] = norms[src];
        vs.row_mut(dst).assign(&vt.row(src));
        if norms[src] > f64::EPSILON * smax * (m as f64) {
            ut.row_mut(dst).assign(&w.row(src).mapv(|x| x / norms[src]));
        }
    }
    orthonormalize_rows(&mut ut);
    Ok(SvdResult {
        u: StiefelPoint::from_orthonormal(ut.reversed_axes().as_standard_layout().into_owned()),
        s: sv,
        v: StiefelPoint::from_orthonormal(vs.reversed_axes().as_standard_layout().into_owned()),
    })
}

fn rotate_rows(w: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    let cols = w.ncols();
    for l in 0..cols {
        let (a, b) = (w[[i, l]], w[[j, l]]);
        w[[i, l]] = c * a - s * b;
        w[[j, l]] = s * a + c * b;
    }
}

/// Two Gram-Schmidt passes over the rows; rows that collapse (zero singular
/// values) are replaced by the standard basis vector with the largest residual.
fn orthonormalize_rows(q: &mut Matrix) {
    let (r, dim) = q.dim();
    for j in 0..r {
        for _ in 0..2 {
            for i in 0..j {
                let d = q.row(i).dot(&q.row(j));
                let qi = q.row(i).to_owned();
                q.row_mut(j).scaled_add(-d, &qi);
            }
        }
        let nrm = q.row(j).dot(&q.row(j)).sqrt();
        if nrm > 0.5 {
            q.row_mut(j).mapv_inplace(|x| x / nrm);
            continue;
        }
        let mut best = (0usize, -1.0f64);
        for e in 0..dim {
            // Residual norm^2 of e_e after removing the accepted rows.
            let res = 1.0 - (0..j).map(|i| q[[i, e]] * q[[i, e]]).sum::<f64>();
            if res > best.1 {
                best = (e, res);
            }
        }
        q.row_mut(j).fill(0.0);
        q[[j, best.0]] = 1.0;
        for _ in 0..2 {
            for i in 0..j {
                let d = q.row(i).dot(&q.row(j));
                let qi = q.row(i).to_owned();
                q.row_mut(j).scaled_add(-d, &qi);
            }
        }
        let nrm = q.row(j).dot(&q.row(j)).sqrt();
        q.row_mut(j).mapv_inplace(|x| x / nrm);
    }
}

/// Observed cells copied; missing cells take their column's observed mean, or 0.
pub fn fill_missing_column_mean(data: &ProblemData) -> Matrix {
    let (m, n) = (data.m(), data.n());
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    let mut observed = vec![false; m * n];
    let mut out = Matrix::zeros((m, n));
    for e in data.entries() {
        sums[e.col] += e.a;
        counts[e.col] += 1;
        observed[e.row * n + e.col] = true;
        out[[e.row, e.col]] = e.a;
    }
    for j in 0..n {
        let mean = if counts[j] > 0 { sums[j] / counts[j] as f64 } else { 0.0 };
        for i in 0..m {
            if !observed[i * n + j] {
                out[[i, j]] = mean;
            }
        }
    }
    out
}

/// Top-`k` SVD as `(U_0, x_0, V_0)` and as `(U_0 sqrt(diag x_0), V_0 sqrt(diag x_0))`.
pub fn truncated_svd_init(dense: &Matrix, k: usize) -> Result<(ProductPoint, FactorPair)> {
    let (m, n) = dense.dim();
    if k == 0 || k > m.min(n) {
        return Err(WlraError::InvalidDimensions(format!("k={k} outside 1..={}", m.min(n))));
    }
    let full = svd(dense)?;
    let x = full.s.slice(s![..k]).to_owned();
    if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(WlraError::NegativeSingularValue { index, value });
    }
    let u = full.u.matrix().slice(s![.., ..k]).to_owned();
    let v = full.v.matrix().slice(s![.., ..k]).to_owned();
    let root = x.mapv(f64::sqrt).insert_axis(Axis(0));
    let pair = FactorPair::new(&u * &root, &v * &root)?;
    let point = ProductPoint::new(StiefelPoint::from_orthonormal(u), x, StiefelPoint::from_orthonormal(v))?;
    Ok((point, pair))
}

/// Best rank-`<= k` approximation in Frobenius norm and its residual `sum_{j > k} s_j^2`.
pub fn eckart_young_best(a: &Matrix, k: usize) -> Result<(Matrix, f64)> {
    let full = svd(a)?;
    let cost = full.s.iter().skip(k).map(|v| v * v).sum();
    Ok((full.reconstruct(k), cost))
}

/// `||A^T P - P^T P||_F <= tol` and `||P A^T - P P^T||_F <= tol`.
pub fn check_stationarity(a: &Matrix, p: &Matrix, tol: f64) -> Result<bool> {
    if a.dim() != p.dim() {
        return Err(WlraError::ShapeMismatch(format!("A is {:?}, P is {:?}", a.dim(), p.dim())));
    }
    let left = a.t().dot(p) - p.t().dot(p);
    let right = p.dot(&a.t()) - p.dot(&p.t());
    Ok(frobenius(left.view()) <= tol && frobenius(right.view()) <= tol)
}
