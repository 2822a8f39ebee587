//! Numerical check of the Tikhonov error estimate under operator and data
//! perturbation, for the quadratic penalty with source condition `x† = Aᵗw`.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kaczmarz::{kaczmarz_solve, KaczmarzConfig};
use crate::linalg::{dist, gaussian_vec, norm2, seeded_rng, singular_values, thin_svd, Matrix};
use crate::rsvd::LowRankFactors;

/// Gradient norm above which a computed minimizer is not trusted.
pub const GRADIENT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct BoundInstance {
    pub a: Matrix,
    pub a_tilde: Matrix,
    pub x_true: Vec<f64>,
    pub w: Vec<f64>,
    pub y_true: Vec<f64>,
    pub y_delta: Vec<f64>,
    pub delta: f64,
    pub eps: f64,
    pub alpha: f64,
    /// Minimize over `x ≥ 0` instead of all of `R^m`.
    pub constrained: bool,
}

/// `x† = Aᵗ w`, `y† = A x†`.
pub fn construct_source(a: &Matrix, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if w.len() != a.rows() {
        return Err(Error::dims(format!("w of length {} for {} rows", w.len(), a.rows())));
    }
    let x = a.tmatvec(w);
    let y = a.matvec(&x);
    Ok((x, y))
}

/// Draws Gaussian `w` until `Aᵗ w ≥ 0`, at most `tries` times.
pub fn nonnegative_source(a: &Matrix, seed: u64, tries: usize) -> Option<Vec<f64>> {
    let mut rng = seeded_rng(seed);
    (0..tries)
        .map(|_| gaussian_vec(a.rows(), &mut rng))
        .find(|w| a.tmatvec(w).iter().all(|v| *v >= 0.0))
}

/// `4α⁻¹(ε‖x†‖ + δ)² + 4α‖w‖² + 4ε²‖w‖²`.
pub fn quadratic_bound_rhs(alpha: f64, eps: f64, delta: f64, norm_xdag: f64, norm_w: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("α must be positive, got {alpha}")));
    }
    let t = eps * norm_xdag + delta;
    Ok(4.0 * t * t / alpha + 4.0 * alpha * norm_w * norm_w + 4.0 * eps * eps * norm_w * norm_w)
}

/// `α⁻¹(ε‖x†‖ + δ)² + α‖w‖² + ε‖w‖‖x† − x̃‖`, bounding `½‖x̃ − x†‖²`.
pub fn theorem_rhs(alpha: f64, eps: f64, delta: f64, norm_xdag: f64, norm_w: f64, err: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("α must be positive, got {alpha}")));
    }
    let t = eps * norm_xdag + delta;
    Ok(t * t / alpha + alpha * norm_w * norm_w + eps * norm_w * err)
}

/// Spectral norm through a dense SVD.
pub fn spectral_norm_dense(a: &Matrix) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

/// Unconstrained minimizer of `‖Ax − y‖² + α‖x‖²` through the SVD of `A`.
pub fn tikhonov_svd(a: &Matrix, y: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let (u, s, v) = thin_svd(&a.to_dmatrix())?;
    let uy = u.transpose() * DVector::from_column_slice(y);
    let c = DVector::from_iterator(s.len(), s.iter().zip(uy.iter()).map(|(s, w)| s * w / (s * s + alpha)));
    Ok((v * c).iter().copied().collect())
}

/// Gradient of `½‖Ax − y‖² + (α/2)‖x‖²`, projected onto the feasible
/// directions when `constrained`.
pub fn optimality_residual(a: &Matrix, x: &[f64], y: &[f64], alpha: f64, constrained: bool) -> f64 {
    let r: Vec<f64> = a.matvec(x).iter().zip(y).map(|(p, q)| p - q).collect();
    let mut g = a.tmatvec(&r);
    for (gj, xj) in g.iter_mut().zip(x) {
        *gj += alpha * xj;
        if constrained && *xj <= 0.0 {
            *gj = gj.min(0.0);
        }
    }
    norm2(&g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub alpha: f64,
    pub eps: f64,
    pub delta: f64,
    /// `‖x̃ − x†‖²`.
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    /// `½‖x̃ − x†‖²` against the mixed-term estimate.
    pub theorem_lhs: f64,
    pub theorem_rhs: f64,
    pub theorem_holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundVerdict {
    Checked(BoundReport),
    /// The perturbed problem was not solved accurately enough to judge.
    Rejected {
        gradient_norm: f64,
    },
}

/// Rounding allowance on the comparison: `lhs ≤ rhs (1 + 1e-10)`.
const REL_ROUNDING: f64 = 1e-10;

pub fn verify_bound(inst: &BoundInstance) -> Result<BoundVerdict> {
    if !(inst.alpha > 0.0) {
        return Err(Error::invalid("α must be positive"));
    }
    let x = if inst.constrained {
        let cfg = KaczmarzConfig::new(inst.alpha).sweeps(500);
        kaczmarz_solve(&inst.a_tilde, &inst.y_delta, &cfg)?.x
    } else {
        tikhonov_svd(&inst.a_tilde, &inst.y_delta, inst.alpha)?
    };
    let g = optimality_residual(&inst.a_tilde, &x, &inst.y_delta, inst.alpha, inst.constrained);
    if !(g <= GRADIENT_TOL) {
        return Ok(BoundVerdict::Rejected { gradient_norm: g });
    }
    let err = dist(&x, &inst.x_true);
    let (nx, nw) = (norm2(&inst.x_true), norm2(&inst.w));
    let lhs = err * err;
    let rhs = quadratic_bound_rhs(inst.alpha, inst.eps, inst.delta, nx, nw)?;
    let theorem_lhs = 0.5 * lhs;
    let theorem_rhs = theorem_rhs(inst.alpha, inst.eps, inst.delta, nx, nw, err)?;
    Ok(BoundVerdict::Checked(BoundReport {
        alpha: inst.alpha,
        eps: inst.eps,
        delta: inst.delta,
        lhs,
        rhs,
        slack: rhs - lhs,
        holds: lhs <= rhs * (1.0 + REL_ROUNDING),
        theorem_lhs,
        theorem_rhs,
        theorem_holds: theorem_lhs <= theorem_rhs * (1.0 + REL_ROUNDING),
    }))
}

/// Grid of instances built from one seeded operator.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundSweep {
    pub rows: usize,
    pub cols: usize,
    pub alphas: Vec<f64>,
    /// Truncation ranks for `Ã`; `None` keeps `Ã = A` (ε = 0).
    pub ranks: Vec<Option<usize>>,
    pub deltas: Vec<f64>,
    pub constrained: bool,
}

impl BoundSweep {
    /// α over the decades `1 … 1e-8`, ε in `{0, σ₃, σ₂}`, δ in `{0, 1e-3, 1e-1}`.
    pub fn standard(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            alphas: (0..=8).map(|e| 10f64.powi(-e)).collect(),
            ranks: vec![None, Some(2), Some(1)],
            deltas: vec![0.0, 1e-3, 1e-1],
            constrained: false,
        }
    }

    pub fn instances(&self, seed: u64) -> Result<Vec<BoundInstance>> {
        let mut rng = seeded_rng(seed);
        let a = Matrix::new(self.rows, self.cols, gaussian_vec(self.rows * self.cols, &mut rng))?;
        let a = a.scaled(1.0 / spectral_norm_dense(&a)?);
        let w = if self.constrained {
            nonnegative_source(&a, rng.random(), 1000)
                .ok_or_else(|| Error::invalid("no nonnegative source found in 1000 draws"))?
        } else {
            gaussian_vec(self.rows, &mut rng)
        };
        let (x_true, y_true) = construct_source(&a, &w)?;
        let direction = gaussian_vec(self.rows, &mut rng);
        let unit = norm2(&direction);
        let mut out = Vec::new();
        for rank in &self.ranks {
            let a_tilde = match rank {
                None => a.clone(),
                Some(k) => LowRankFactors::from_dense_svd(&a, *k)?.to_matrix(),
            };
            let eps = spectral_norm_dense(&a.sub(&a_tilde)?)?;
            for &d in &self.deltas {
                let y_delta: Vec<f64> = y_true.iter().zip(&direction).map(|(y, e)| y + d * e / unit).collect();
                let delta = dist(&y_delta, &y_true);
                for &alpha in &self.alphas {
                    out.push(BoundInstance {
                        a: a.clone(),
                        a_tilde: a_tilde.clone(),
                        x_true: x_true.clone(),
                        w: w.clone(),
                        y_true: y_true.clone(),
                        y_delta: y_delta.clone(),
                        delta,
                        eps,
                        alpha,
                        constrained: self.constrained,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// CSV with columns `alpha,eps,delta,lhs,rhs,slack,holds`.
pub fn report_csv(reports: &[BoundReport]) -> String {
    let mut out = String::from("alpha,eps,delta,lhs,rhs,slack,holds\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.alpha, r.eps, r.delta, r.lhs, r.rhs, r.slack, r.holds
        );
    }
    out
}

/// `(ε‖x†‖ + δ)/‖w‖`, where the first two terms of the estimate balance.
pub fn balanced_alpha(eps: f64, delta: f64, norm_xdag: f64, norm_w: f64) -> f64 {
    (eps * norm_xdag + delta) / norm_w
}
