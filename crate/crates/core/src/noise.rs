//! Noise statistics from repeated empty measurements and the whitening
//! transform built from them.

use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::io_formats::{read_matrix, read_vector, write_matrix, write_vector};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::system::{Provenance, SystemMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceKind {
    Diagonal,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(Matrix),
}

/// Gaussian noise model `N(μ, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceModel {
    pub mean: Vec<f64>,
    pub covariance: Covariance,
    pub samples: usize,
}

impl CovarianceModel {
    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::dims("mean and variance lengths differ"));
        }
        if variances.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("variances must be nonnegative"));
        }
        Ok(Self {
            mean,
            covariance: Covariance::Diagonal(variances),
            samples: 0,
        })
    }

    pub fn full(mean: Vec<f64>, c: Matrix) -> Result<Self> {
        let n = mean.len();
        if c.shape() != (n, n) {
            return Err(Error::dims("covariance must be n x n"));
        }
        let scale = c.as_slice().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for i in 0..n {
            for j in 0..i {
                if (c.get(i, j) - c.get(j, i)).abs() > 1e-12 * scale.max(1.0) {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
            }
        }
        Ok(Self {
            mean,
            covariance: Covariance::Full(c),
            samples: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Per-row variances (the diagonal of `C` for a full model).
    pub fn variances(&self) -> Vec<f64> {
        match &self.covariance {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(c) => (0..c.rows()).map(|i| c.get(i, i)).collect(),
        }
    }

    /// Default variance floor: `1e-12 · max variance`, or `1` when every
    /// variance is zero (no information; whitening reduces to the identity).
    pub fn default_floor(&self) -> f64 {
        let vmax = self.variances().into_iter().fold(0.0f64, f64::max);
        if vmax > 0.0 {
            1e-12 * vmax
        } else {
            1.0
        }
    }
}

/// Sample mean and unbiased (divide by `K − 1`) covariance of the rows of
/// `samples`, each a length-`n` background coefficient vector.
pub fn estimate_covariance(samples: &[Vec<f64>], kind: CovarianceKind) -> Result<CovarianceModel> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::invalid(format!(
            "covariance estimation needs at least 2 samples, got {k}"
        )));
    }
    let n = samples[0].len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(Error::dims("samples differ in length"));
    }
    let mut mean = vec![0.0; n];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    let denom = (k - 1) as f64;
    let covariance = match kind {
        CovarianceKind::Diagonal => {
            let mut var = vec![0.0; n];
            for s in samples {
                for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= denom);
            Covariance::Diagonal(var)
        }
        CovarianceKind::Full => {
            if k < n + 1 {
                warn!("full covariance from {k} samples in dimension {n} is rank deficient");
            }
            let mut c = Matrix::zeros(n, n);
            for s in samples {
                let d: Vec<f64> = s.iter().zip(&mean).map(|(v, m)| v - m).collect();
                for i in 0..n {
                    for j in 0..=i {
                        let v = c.get(i, j) + d[i] * d[j];
                        c.set(i, j, v);
                    }
                }
            }
            for i in 0..n {
                for j in 0..=i {
                    let v = c.get(i, j) / denom;
                    c.set(i, j, v);
                    c.set(j, i, v);
                }
            }
            Covariance::Full(c)
        }
    };
    Ok(CovarianceModel {
        mean,
        covariance,
        samples: k,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Whitening {
    DiagonalScale(Vec<f64>),
    Dense(Matrix),
}

/// `W` with `W C Wᵗ = I` on the eigenspaces above the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningOperator {
    pub kind: Whitening,
    pub floor: f64,
}

impl WhiteningOperator {
    pub fn identity(n: usize) -> Self {
        Self {
            kind: Whitening::DiagonalScale(vec![1.0; n]),
            floor: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            Whitening::DiagonalScale(w) => w.len(),
            Whitening::Dense(w) => w.cols(),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match &self.kind {
            Whitening::DiagonalScale(w) => v.iter().zip(w).map(|(a, b)| a * b).collect(),
            Whitening::Dense(w) => w.matvec(v),
        }
    }
}

/// Diagonal: `w_i = 1/√max(var_i, ε)`. Full: `C = QΛQᵗ`, eigenvalues
/// clamped at `ε`, `W = Λ^{-1/2} Qᵗ` with eigenpairs in descending order.
pub fn whitening_from(model: &CovarianceModel, floor: f64) -> Result<WhiteningOperator> {
    if !(floor > 0.0) {
        return Err(Error::invalid("variance floor must be positive"));
    }
    let kind = match &model.covariance {
        Covariance::Diagonal(v) => Whitening::DiagonalScale(v.iter().map(|&s| 1.0 / s.max(floor).sqrt()).collect()),
        Covariance::Full(c) => {
            let (values, q) = symmetric_eigen(&c.to_dmatrix())?;
            let n = c.rows();
            let mut w = Matrix::zeros(n, n);
            for (r, v) in values.iter().enumerate() {
                let scale = 1.0 / v.max(floor).sqrt();
                for j in 0..n {
                    w.set(r, j, scale * q[(j, r)]);
                }
            }
            Whitening::Dense(w)
        }
    };
    Ok(WhiteningOperator { kind, floor })
}

/// `A_W = W A`, `y_W = W (y − μ)`.
pub fn apply_whitening(
    w: &WhiteningOperator,
    a: &SystemMatrix,
    y: &[f64],
    mean: &[f64],
) -> Result<(SystemMatrix, Vec<f64>)> {
    let n = a.rows();
    if w.dim() != n || y.len() != n || mean.len() != n {
        return Err(Error::dims(format!(
            "whitening of dimension {} for {n} rows (data {}, mean {})",
            w.dim(),
            y.len(),
            mean.len()
        )));
    }
    let centered: Vec<f64> = y.iter().zip(mean).map(|(a, b)| a - b).collect();
    let aw = match &w.kind {
        Whitening::DiagonalScale(weights) => {
            let mut out = a.matrix.clone();
            for (i, &s) in weights.iter().enumerate() {
                out.row_mut(i).iter_mut().for_each(|v| *v *= s);
            }
            out
        }
        Whitening::Dense(wm) => wm.matmul(&a.matrix)?,
    };
    Ok((a.derived(aw, Provenance::Whitened), w.apply(&centered)))
}

/// Stores `mean.vec` plus `variances.vec` or `covariance.smx` in `dir`.
pub fn write_covariance(model: &CovarianceModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_vector(dir.join("mean.vec"), &model.mean)?;
    match &model.covariance {
        Covariance::Diagonal(v) => write_vector(dir.join("variances.vec"), v),
        Covariance::Full(c) => write_matrix(dir.join("covariance.smx"), c),
    }
}

pub fn read_covariance(dir: impl AsRef<Path>) -> Result<CovarianceModel> {
    let dir = dir.as_ref();
    let mean = read_vector(dir.join("mean.vec"))?;
    let var_path = dir.join("variances.vec");
    if var_path.exists() {
        CovarianceModel::diagonal(mean, read_vector(var_path)?)
    } else {
        CovarianceModel::full(mean, read_matrix(dir.join("covariance.smx"))?)
    }
}
