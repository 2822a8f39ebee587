//! Randomized SVD and the reduced Tikhonov problem built from it.

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_formats::{read_matrix, read_vector, write_matrix, write_vector};
use crate::linalg::{gaussian_dmatrix, orthonormalize, seeded_rng, thin_svd, Matrix};

pub const DEFAULT_OVERSAMPLING: usize = 5;
pub const DEFAULT_POWER: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchParams {
    pub k: usize,
    /// Oversampling actually used (after clamping to the matrix size).
    pub p: usize,
    pub q_power: usize,
    pub seed: u64,
}

/// Rank-`k` factors `A ≈ U diag(s) Vᵗ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactors {
    /// `n × k`, orthonormal columns.
    pub u: Matrix,
    /// Nonincreasing, nonnegative.
    pub s: Vec<f64>,
    /// `m × k`, orthonormal columns.
    pub v: Matrix,
    pub params: SketchParams,
}

impl LowRankFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn rows(&self) -> usize {
        self.u.rows()
    }

    pub fn cols(&self) -> usize {
        self.v.rows()
    }

    /// Dense `U diag(s) Vᵗ`.
    pub fn to_matrix(&self) -> Matrix {
        let u = self.u.to_dmatrix();
        let mut us = u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        Matrix::from_dmatrix(&(us * self.v.to_dmatrix().transpose()))
    }

    /// Exact SVD of a small dense matrix, truncated to rank `k`; used where
    /// factors of a known matrix are wanted without sketching.
    pub fn from_dense_svd(a: &Matrix, k: usize) -> Result<Self> {
        let max = a.rows().min(a.cols());
        if k == 0 || k > max {
            return Err(Error::RankOutOfRange { k, max });
        }
        let (u, s, v) = thin_svd(&a.to_dmatrix())?;
        Ok(Self {
            u: Matrix::from_dmatrix(&u.columns(0, k).into_owned()),
            s: s[..k].to_vec(),
            v: Matrix::from_dmatrix(&v.columns(0, k).into_owned()),
            params: SketchParams {
                k,
                p: 0,
                q_power: 0,
                seed: 0,
            },
        })
    }
}

/// Randomized rank-`k` SVD with oversampling `p` and `q_power` power steps.
///
/// The Gaussian test matrix is drawn column by column from a ChaCha stream
/// seeded with `seed`. The sketch is re-orthonormalized after every product
/// with `A` or `Aᵗ`. Wide matrices are handled through their transpose.
/// When `k + p` exceeds `min(n, m)` the oversampling is reduced.
pub fn rsvd(a: &Matrix, k: usize, p: usize, q_power: usize, seed: u64) -> Result<LowRankFactors> {
    let (n, m) = a.shape();
    let max = n.min(m);
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange { k, max });
    }
    let p_used = if k + p > max {
        warn!("oversampling {p} clamped to {} (k = {k}, min(n, m) = {max})", max - k);
        max - k
    } else {
        p
    };
    let params = SketchParams {
        k,
        p: p_used,
        q_power,
        seed,
    };
    let dense = a.to_dmatrix();
    if n >= m {
        let (u, s, v) = rsvd_tall(&dense, k, k + p_used, q_power, seed)?;
        Ok(LowRankFactors {
            u: Matrix::from_dmatrix(&u),
            s,
            v: Matrix::from_dmatrix(&v),
            params,
        })
    } else {
        let (u, s, v) = rsvd_tall(&dense.transpose(), k, k + p_used, q_power, seed)?;
        Ok(LowRankFactors {
            u: Matrix::from_dmatrix(&v),
            s,
            v: Matrix::from_dmatrix(&u),
            params,
        })
    }
}

fn rsvd_tall(
    a: &DMatrix<f64>,
    k: usize,
    l: usize,
    q_power: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let mut rng = seeded_rng(seed);
    let omega = gaussian_dmatrix(a.ncols(), l, &mut rng);
    let mut q = orthonormalize(&(a * omega));
    if q_power > 0 {
        let at = a.transpose();
        for _ in 0..q_power {
            let z = orthonormalize(&(&at * &q));
            q = orthonormalize(&(a * z));
        }
    }
    let b = q.transpose() * a;
    let (w, s, v) = thin_svd(&b)?;
    let u = q * w.columns(0, k);
    Ok((u, s[..k].to_vec(), v.columns(0, k).into_owned()))
}

/// `min ‖B x − z‖² + α‖x‖²` with `B = diag(s) Vᵗ` and `z = Uᵗ y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedProblem {
    pub b: Matrix,
    pub z: Vec<f64>,
    pub params: SketchParams,
}

pub fn reduce_problem(f: &LowRankFactors, y: &[f64]) -> Result<ReducedProblem> {
    if y.len() != f.rows() {
        return Err(Error::dims(format!(
            "data of length {} for factors with {} rows",
            y.len(),
            f.rows()
        )));
    }
    Ok(ReducedProblem {
        b: reduced_operator(f),
        z: project_data(f, y),
        params: f.params,
    })
}

/// `diag(s) Vᵗ`, the `k × m` operator of the reduced problem.
pub fn reduced_operator(f: &LowRankFactors) -> Matrix {
    let (m, k) = f.v.shape();
    Matrix::from_fn(k, m, |i, j| f.s[i] * f.v.get(j, i))
}

/// `Uᵗ y`.
pub fn project_data(f: &LowRankFactors, y: &[f64]) -> Vec<f64> {
    f.u.tmatvec(y)
}

/// `Σ_{i≤k} σ_i² / Σ_i σ_i²`.
pub fn energy_fraction(sigma: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > sigma.len() {
        return Err(Error::RankOutOfRange { k, max: sigma.len() });
    }
    if sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::invalid("singular values must be nonnegative"));
    }
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::invalid("spectrum is identically zero"));
    }
    if k == sigma.len() {
        return Ok(1.0);
    }
    let head: f64 = sigma[..k].iter().map(|s| s * s).sum();
    Ok(head / total)
}

pub fn write_factors(f: &LowRankFactors, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(dir.join("u.smx"), &f.u)?;
    write_vector(dir.join("s.vec"), &f.s)?;
    write_matrix(dir.join("v.smx"), &f.v)?;
    let text = toml::to_string(&f.params).map_err(|e| Error::Parse(e.to_string()))?;
    let path = dir.join("factors.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_factors(dir: impl AsRef<Path>) -> Result<LowRankFactors> {
    let dir = dir.as_ref();
    let path = dir.join("factors.toml");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let params: SketchParams = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let f = LowRankFactors {
        u: read_matrix(dir.join("u.smx"))?,
        s: read_vector(dir.join("s.vec"))?,
        v: read_matrix(dir.join("v.smx"))?,
        params,
    };
    if f.u.cols() != f.s.len() || f.v.cols() != f.s.len() {
        return Err(Error::dims("factor files disagree on the rank"));
    }
    Ok(f)
}
