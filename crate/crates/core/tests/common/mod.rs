//! Reference computations used as independent oracles in the integration tests.
#![allow(dead_code)]

use mpirecon_core::Matrix;
use nalgebra::{DMatrix, DVector};

/// `(AᵗA + αI)⁻¹ Aᵗ y` by Cholesky.
pub fn normal_equations(a: &Matrix, y: &[f64], alpha: f64) -> Vec<f64> {
    let d = a.to_dmatrix();
    let mut g = d.transpose() * &d;
    for j in 0..a.cols() {
        g[(j, j)] += alpha;
    }
    let rhs = d.transpose() * DVector::from_column_slice(y);
    g.cholesky()
        .expect("regularized Gram matrix is SPD")
        .solve(&rhs)
        .iter()
        .copied()
        .collect()
}

pub fn objective(a: &Matrix, x: &[f64], y: &[f64], alpha: f64) -> f64 {
    let r: f64 = a.matvec(x).iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum();
    r + alpha * x.iter().map(|v| v * v).sum::<f64>()
}

/// Constrained minimizer of `‖Ax − y‖² + α‖x‖²` over `x ≥ 0` by trying every
/// free set and keeping the best feasible candidate.
pub fn active_set(a: &Matrix, y: &[f64], alpha: f64) -> Vec<f64> {
    let m = a.cols();
    assert!(m <= 12, "enumeration is exponential in m");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let free: Vec<usize> = (0..m).filter(|j| mask >> j & 1 == 1).collect();
        let mut x = vec![0.0; m];
        if !free.is_empty() {
            let af = Matrix::from_fn(a.rows(), free.len(), |i, c| a.get(i, free[c]));
            let xf = normal_equations(&af, y, alpha);
            if xf.iter().any(|v| *v < 0.0) {
                continue;
            }
            for (c, &j) in free.iter().enumerate() {
                x[j] = xf[c];
            }
        }
        let f = objective(a, &x, y, alpha);
        if best.as_ref().is_none_or(|b| f < b.0) {
            best = Some((f, x));
        }
    }
    best.expect("x = 0 is always feasible").1
}

/// Largest singular value from the symmetric eigenproblem of `AᵗA`.
pub fn spectral_norm(a: &Matrix) -> f64 {
    let d = a.to_dmatrix();
    let g = d.transpose() * &d;
    g.symmetric_eigenvalues().iter().fold(0.0f64, |m, v| m.max(*v)).sqrt()
}

/// `‖a − b‖ / ‖b‖`, falling back to the absolute distance when `b = 0`.
pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let d = l2(a, b);
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb > 0.0 {
        d / nb
    } else {
        d
    }
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn dense(a: &Matrix) -> DMatrix<f64> {
    a.to_dmatrix()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
