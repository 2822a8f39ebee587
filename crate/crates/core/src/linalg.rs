//! Dense row-major matrices and the handful of kernels the solvers need.
//!
//! Row-major storage keeps each equation contiguous, which is what the
//! row-action solver touches on every step. Factorizations delegate to
//! `nalgebra` through [`Matrix::to_dmatrix`] / [`Matrix::from_dmatrix`].

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Dense real matrix stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::dims(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_diagonal(rows: usize, cols: usize, diag: &[f64]) -> Self {
        let mut out = Self::zeros(rows, cols);
        for (i, &d) in diag.iter().enumerate().take(rows.min(cols)) {
            out.set(i, i, d);
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec: length mismatch");
        self.iter_rows().map(|r| dot(r, x)).collect()
    }

    /// `Aᵗ y`, accumulated row by row in a fixed order.
    pub fn tmatvec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "tmatvec: length mismatch");
        let mut out = vec![0.0; self.cols];
        for (r, &yi) in self.iter_rows().zip(y) {
            axpy(yi, r, &mut out);
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// Keeps the rows whose mask entry is `true`, in order.
    pub fn select_rows(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.rows {
            return Err(Error::dims(format!(
                "row mask of length {} for {} rows",
                mask.len(),
                self.rows
            )));
        }
        let mut data = Vec::new();
        let mut kept = 0;
        for (r, &keep) in self.iter_rows().zip(mask) {
            if keep {
                data.extend_from_slice(r);
                kept += 1;
            }
        }
        Ok(Self {
            rows: kept,
            cols: self.cols,
            data,
        })
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &Matrix) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::dims(format!("{:?} minus {:?}", self.shape(), other.shape())));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dims(format!("{:?} times {:?}", self.shape(), other.shape())));
        }
        Ok(Self::from_dmatrix(&(self.to_dmatrix() * other.to_dmatrix())))
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        // nalgebra is column-major; its transpose's storage is our row-major layout.
        let data = m.transpose().as_slice().to_vec();
        Self { rows, cols, data }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four independent partial sums; the reduction order is fixed.
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `‖a − b‖ / ‖b‖`, or the absolute distance when `b` is zero.
pub fn rel_dist(a: &[f64], b: &[f64]) -> f64 {
    let nb = norm2(b);
    let d = dist(a, b);
    if nb > 0.0 {
        d / nb
    } else {
        d
    }
}

/// Seeded generator shared by every randomized routine.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard-normal matrix filled column by column from the stream.
pub fn gaussian_dmatrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_vec(rows, cols, data)
}

pub fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `Yᵗ Y` through the blocked product; nalgebra's `tr_mul` is unblocked.
pub fn gram(y: &DMatrix<f64>) -> DMatrix<f64> {
    let g = y.transpose() * y;
    (&g + g.transpose()) * 0.5
}

/// Orthonormal basis for the column space of `y` (same column count).
///
/// Runs Cholesky-QR twice, which stays fast on tall matrices because every
/// step is a matrix product. Falls back to Householder QR when the Gram
/// matrix is numerically singular or the result fails the orthonormality
/// check; Householder completes a rank-deficient `y` with arbitrary
/// orthonormal directions.
pub fn orthonormalize(y: &DMatrix<f64>) -> DMatrix<f64> {
    let k = y.ncols();
    if k == 0 {
        return y.clone();
    }
    let chol = cholesky_qr(y).and_then(|q1| cholesky_qr(&q1));
    if let Some(q) = chol {
        if orthonormality_defect(&q) <= 1e-12 * (k as f64).max(1.0) {
            return q;
        }
    }
    householder_q(y)
}

fn cholesky_qr(y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let g = gram(y);
    let scale = g.diagonal().max();
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let chol = g.cholesky()?;
    let r = chol.l().transpose();
    // Reject pivots that signal lost rank before inverting.
    let dmin = r.diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if dmin < 1e-7 * scale.sqrt() {
        return None;
    }
    let r_inv = r.solve_upper_triangular(&DMatrix::identity(r.nrows(), r.nrows()))?;
    let q = y * r_inv;
    q.iter().all(|v| v.is_finite()).then_some(q)
}

fn householder_q(y: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = y.shape();
    if n >= k {
        y.clone().qr().q()
    } else {
        // More columns than rows: only n directions exist.
        y.columns(0, n).into_owned().qr().q()
    }
}

/// Largest entrywise deviation of `QᵗQ` from the identity.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let g = gram(q);
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Spectral-norm estimate by power iteration on `AᵗA` from a seeded start.
///
/// Returns the square root of the Rayleigh quotient once it changes by less
/// than `rel_tol` (relative) between iterations, or after `max_iter` steps.
pub fn spectral_norm(a: &Matrix, rel_tol: f64, max_iter: usize, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let mut v = gaussian_vec(a.cols(), &mut rng);
    let nv = norm2(&v);
    if nv == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda_prev = 0.0;
    for _ in 0..max_iter {
        let av = a.matvec(&v);
        let lambda = dot(&av, &av);
        let mut w = a.tmatvec(&av);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
        if (lambda - lambda_prev).abs() <= rel_tol * lambda {
            // One more Rayleigh quotient with the refreshed vector.
            let av = a.matvec(&v);
            return dot(&av, &av).max(lambda).sqrt();
        }
        lambda_prev = lambda;
    }
    let av = a.matvec(&v);
    dot(&av, &av).sqrt()
}

fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(a: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Thin SVD `(U, s, V)` with `s` in nonincreasing order.
///
/// Backed by faer, which stays accurate on rank-deficient input.
pub fn thin_svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::Decomposition(format!("SVD failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let s: Vec<f64> = (0..s.nrows()).map(|i| s[i]).collect();
    debug_assert!(s.windows(2).all(|w| w[0] >= w[1]));
    Ok((from_faer(svd.U()), s, from_faer(svd.V())))
}

pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    let f = to_faer(&a.to_dmatrix());
    let mut s = f
        .singular_values()
        .map_err(|e| Error::Decomposition(format!("SVD failed: {e:?}")))?;
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Eigenpairs `(λ, Q)` of a symmetric matrix, eigenvalues in nonincreasing order.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let evd = to_faer(a)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Decomposition(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let n = s.nrows();
    // faer returns ascending order
    let values = (0..n).rev().map(|i| s[i]).collect();
    let vectors = DMatrix::from_fn(u.nrows(), n, |i, j| u[(i, n - 1 - j)]);
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dmatrix_roundtrip_preserves_layout() {
        let a = Matrix::from_fn(3, 4, |i, j| (10 * i + j) as f64);
        let d = a.to_dmatrix();
        assert_eq!(d[(2, 1)], 21.0);
        assert_eq!(Matrix::from_dmatrix(&d), a);
    }

    #[test]
    fn transpose_products_agree() {
        let a = Matrix::from_fn(5, 3, |i, j| (i as f64 - 2.0) * (j as f64 + 0.5));
        let y = [1.0, -2.0, 0.5, 3.0, -1.0];
        let direct = a.tmatvec(&y);
        let via_t = a.transpose().matvec(&y);
        for (p, q) in direct.iter().zip(&via_t) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (0..7).map(f64::from).collect();
        assert_eq!(dot(&a, &a), 91.0);
    }

    #[test]
    fn orthonormalize_full_rank_and_deficient() {
        let mut rng = seeded_rng(3);
        let y = gaussian_dmatrix(40, 6, &mut rng);
        let q = orthonormalize(&y);
        assert!(orthonormality_defect(&q) < 1e-13);
        // Projection reproduces y.
        let resid = &y - &q * (q.transpose() * &y);
        assert!(resid.norm() < 1e-12 * y.norm());

        let u = gaussian_dmatrix(40, 2, &mut rng);
        let c = gaussian_dmatrix(2, 6, &mut rng);
        let low = &u * c;
        let q = orthonormalize(&low);
        assert_eq!(q.ncols(), 6);
        assert!(orthonormality_defect(&q) < 1e-12);
        let resid = &low - &q * (q.transpose() * &low);
        assert!(resid.norm() < 1e-12 * low.norm());
    }

    #[test]
    fn spectral_norm_of_scaled_identity() {
        let a = Matrix::identity(4).scaled(3.0);
        assert!((spectral_norm(&a, 1e-10, 10_000, 1) - 3.0).abs() < 1e-12);
    }
}
