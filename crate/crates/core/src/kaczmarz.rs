//! Regularized Kaczmarz iteration for `min ‖Ax − y‖² + α‖x‖²` subject to `x ≥ 0`.
//!
//! The sweep runs over the extended system `[A, √α I] (x, z) = y`; an
//! auxiliary vector `z̄` accumulates the nonnegativity corrections so that
//! the projection can be partially undone in later sweeps.

use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dist, dot, norm2, Matrix};
use crate::result::{ReconstructionResult, SolverTag};

pub const DEFAULT_SWEEPS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KaczmarzConfig {
    pub alpha: f64,
    /// Relaxation, in `(0, 2)`.
    pub omega: f64,
    pub sweeps: usize,
    pub x0: Option<Vec<f64>>,
    pub enforce_nonneg: bool,
    /// Stop after a sweep once `‖x_new − x_old‖ ≤ tol·‖x_new‖`. Off when `None`.
    pub rel_change_tol: Option<f64>,
    /// Record the Tikhonov objective at every sweep end (costs one product per sweep).
    pub record_objective: bool,
}

impl KaczmarzConfig {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            omega: 1.0,
            sweeps: DEFAULT_SWEEPS,
            x0: None,
            enforce_nonneg: true,
            rel_change_tol: None,
            record_objective: false,
        }
    }

    pub fn sweeps(mut self, sweeps: usize) -> Self {
        self.sweeps = sweeps;
        self
    }

    pub fn omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn unconstrained(mut self) -> Self {
        self.enforce_nonneg = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("α must be positive, got {}", self.alpha)));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::invalid(format!("ω must lie in (0, 2), got {}", self.omega)));
        }
        if self.sweeps == 0 {
            return Err(Error::invalid("at least one sweep is required"));
        }
        if let Some(t) = self.rel_change_tol {
            if !(t >= 0.0) {
                return Err(Error::invalid("relative-change tolerance must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Iterate and auxiliaries of a running solve.
#[derive(Clone, Debug)]
pub struct KaczmarzState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub zbar: Vec<f64>,
    pub k: usize,
}

pub fn residual_norm(a: &Matrix, x: &[f64], y: &[f64]) -> Result<f64> {
    if a.cols() != x.len() || a.rows() != y.len() {
        return Err(Error::dims(format!(
            "operator {}×{} with x of length {} and y of length {}",
            a.rows(),
            a.cols(),
            x.len(),
            y.len()
        )));
    }
    let mut s = 0.0;
    for (row, yi) in a.iter_rows().zip(y) {
        let r = dot(row, x) - yi;
        s += r * r;
    }
    Ok(s.sqrt())
}

pub fn tikhonov_objective(a: &Matrix, x: &[f64], y: &[f64], alpha: f64) -> Result<f64> {
    let r = residual_norm(a, x, y)?;
    let nx = norm2(x);
    Ok(r * r + alpha * nx * nx)
}

/// Runs `sweeps · n` row updates in the cyclic order `i = k mod n`, `k = 1, 2, …`
/// (so row 1 is visited first and row 0 last within a sweep), with the
/// nonnegativity correction after row `n − 1` and after the final update.
pub fn kaczmarz_solve(a: &Matrix, y: &[f64], cfg: &KaczmarzConfig) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let (n, m) = a.shape();
    if y.len() != n {
        return Err(Error::dims(format!("data of length {} for {n} rows", y.len())));
    }
    let start = Instant::now();
    let mut state = KaczmarzState {
        x: match &cfg.x0 {
            Some(x0) if x0.len() != m => return Err(Error::dims(format!("x0 of length {} for {m} columns", x0.len()))),
            Some(x0) => x0.clone(),
            None => vec![0.0; m],
        },
        z: vec![0.0; n],
        zbar: vec![0.0; m],
        k: 0,
    };
    let row_norms: Vec<f64> = a.iter_rows().map(|r| dot(r, r)).collect();
    let zero_rows = row_norms.iter().filter(|&&s| s == 0.0).count();
    if zero_rows > 0 {
        warn!("{zero_rows} all-zero rows are skipped");
    }
    let sqrt_alpha = cfg.alpha.sqrt();
    let omega = cfg.omega;
    let total = cfg.sweeps * n;
    let mut trace = Vec::new();
    let mut prev_sweep = cfg.rel_change_tol.map(|_| state.x.clone());
    let mut done = total;

    for k in 1..=total {
        state.k = k;
        let i = k % n;
        if row_norms[i] > 0.0 {
            let row = a.row(i);
            let eta = -omega * (dot(row, &state.x) + sqrt_alpha * state.z[i] - y[i]) / (row_norms[i] + cfg.alpha);
            if !eta.is_finite() {
                return Err(Error::NonFinite { iteration: k, row: i });
            }
            state.z[i] += eta * sqrt_alpha;
            axpy(eta, row, &mut state.x);
        }
        let sweep_end = i == n - 1;
        if cfg.enforce_nonneg && (sweep_end || k == total) {
            for (xj, zj) in state.x.iter_mut().zip(state.zbar.iter_mut()) {
                let eta_bar = -zj.min(omega * *xj);
                *zj += eta_bar;
                *xj += eta_bar;
            }
        }
        if sweep_end || k == total {
            if state.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { iteration: k, row: i });
            }
            if cfg.record_objective {
                trace.push(tikhonov_objective(a, &state.x, y, cfg.alpha)?);
            }
            if let (Some(tol), Some(prev)) = (cfg.rel_change_tol, prev_sweep.as_mut()) {
                let change = dist(&state.x, prev);
                if change <= tol * norm2(&state.x) {
                    done = k;
                    break;
                }
                prev.copy_from_slice(&state.x);
            }
        }
    }
    if cfg.enforce_nonneg && omega != 1.0 {
        // With ω ≠ 1 the correction alone does not guarantee x ≥ 0.
        for v in state.x.iter_mut() {
            *v = v.max(0.0);
        }
    }
    let residual = residual_norm(a, &state.x, y)?;
    Ok(ReconstructionResult {
        x: state.x,
        alpha: cfg.alpha,
        solver: SolverTag::Kaczmarz,
        iterations: done,
        residual_norm: residual,
        wall_time: start.elapsed(),
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_vec, seeded_rng};

    fn normal_equations(a: &Matrix, y: &[f64], alpha: f64) -> Vec<f64> {
        let d = a.to_dmatrix();
        let mut g = d.transpose() * &d;
        for j in 0..a.cols() {
            g[(j, j)] += alpha;
        }
        let rhs = d.transpose() * nalgebra::DVector::from_column_slice(y);
        g.cholesky().unwrap().solve(&rhs).iter().copied().collect()
    }

    #[test]
    fn identity_gives_projection_of_data() {
        let a = Matrix::identity(3);
        let r = kaczmarz_solve(&a, &[1.0, -1.0, 2.0], &KaczmarzConfig::new(1e-12).sweeps(50)).unwrap();
        for (got, want) in r.x.iter().zip([1.0, 0.0, 2.0]) {
            assert!((got - want).abs() < 1e-6, "{:?}", r.x);
        }
        assert_eq!(r.iterations, 150);
    }

    #[test]
    fn identity_shrinkage() {
        let a = Matrix::identity(2);
        let r = kaczmarz_solve(&a, &[1.0, 1.0], &KaczmarzConfig::new(1.0).sweeps(100)).unwrap();
        assert!(r.x.iter().all(|v| (v - 0.5).abs() < 1e-6), "{:?}", r.x);
    }

    #[test]
    fn interior_solution_matches_normal_equations() {
        let mut rng = seeded_rng(12);
        let a = Matrix::new(12, 5, gaussian_vec(60, &mut rng)).unwrap();
        let a = a.scaled(1.0 / crate::linalg::spectral_norm(&a, 1e-12, 1000, 1));
        let x_true: Vec<f64> = (0..5).map(|j| 1.0 + j as f64 * 0.5).collect();
        let y = a.matvec(&x_true);
        let want = normal_equations(&a, &y, 1e-2);
        assert!(want.iter().all(|v| *v > 0.1));
        let r = kaczmarz_solve(&a, &y, &KaczmarzConfig::new(1e-2).sweeps(200)).unwrap();
        assert!(crate::linalg::rel_dist(&r.x, &want) < 1e-5);
    }

    #[test]
    fn first_row_touched_is_row_one() {
        // One sweep over two coupled rows: row 1 first, then row 0.
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let r = kaczmarz_solve(&a, &[1.0, 3.0], &KaczmarzConfig::new(1e-300).sweeps(1)).unwrap();
        assert!(
            (r.x[0] - 1.0).abs() < 1e-12 && (r.x[1] - 1.5).abs() < 1e-12,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn zero_rows_are_skipped() {
        let a = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = kaczmarz_solve(&a, &[5.0, 1.0, 2.0], &KaczmarzConfig::new(1e-10).sweeps(30)).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn nonfinite_data_aborts() {
        let a = Matrix::identity(2);
        let err = kaczmarz_solve(&a, &[f64::NAN, 1.0], &KaczmarzConfig::new(1.0)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, .. }), "{err}");
    }

    #[test]
    fn config_is_validated() {
        let a = Matrix::identity(2);
        let y = [1.0, 1.0];
        assert!(kaczmarz_solve(&a, &y, &KaczmarzConfig::new(0.0)).is_err());
        assert!(kaczmarz_solve(&a, &y, &KaczmarzConfig::new(1.0).omega(2.0)).is_err());
        assert!(kaczmarz_solve(&a, &y, &KaczmarzConfig::new(1.0).sweeps(0)).is_err());
        assert!(kaczmarz_solve(&a, &[1.0], &KaczmarzConfig::new(1.0)).is_err());
    }

    #[test]
    fn residual_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let x = [1.0, -1.0];
        let y = a.matvec(&x);
        assert!(residual_norm(&a, &x, &y).unwrap() < 1e-12);
        assert_eq!(residual_norm(&a, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let y2 = [0.5, -2.0];
        let direct = ((-1.0f64 - 0.5).powi(2) + (-1.0f64 + 2.0).powi(2)).sqrt();
        assert!((residual_norm(&a, &x, &y2).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn early_stop_reports_fewer_iterations() {
        let a = Matrix::identity(4);
        let cfg = KaczmarzConfig {
            rel_change_tol: Some(1e-12),
            ..KaczmarzConfig::new(1e-8).sweeps(1000)
        };
        let r = kaczmarz_solve(&a, &[1.0, 2.0, 3.0, 4.0], &cfg).unwrap();
        assert!(r.iterations < 4000);
    }
}
