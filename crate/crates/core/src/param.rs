//! Geometric α-grids and the discrepancy and quasi-optimality rules.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dist;

/// `α_i = α0 · q^i`, `i = 0..count`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub alpha0: f64,
    pub q: f64,
    pub values: Vec<f64>,
}

impl AlphaGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }
}

pub fn alpha_grid(alpha0: f64, q: f64, count: usize) -> Result<AlphaGrid> {
    if !(alpha0 > 0.0) || !alpha0.is_finite() {
        return Err(Error::invalid(format!("α0 must be positive, got {alpha0}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("decay q must lie in (0, 1), got {q}")));
    }
    if count < 2 {
        return Err(Error::invalid("an α-grid needs at least two points"));
    }
    let values: Vec<f64> = (0..count).map(|i| alpha0 * q.powi(i as i32)).collect();
    if values.last().is_some_and(|v| *v <= 0.0) {
        return Err(Error::invalid("grid underflows to zero"));
    }
    Ok(AlphaGrid { alpha0, q, values })
}

/// `τ δ + σ ε`.
pub fn dp_bound(tau: f64, delta: f64, sigma: f64, eps: f64) -> f64 {
    tau * delta + sigma * eps
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleOutcome {
    pub index: usize,
    /// Residual norms (discrepancy) or consecutive distances (quasi-optimality), by index.
    pub diagnostics: Vec<f64>,
    /// Set when the discrepancy rule fell back to the minimum-residual index.
    pub fallback: bool,
}

impl RuleOutcome {
    pub fn alpha(&self, grid: &AlphaGrid) -> f64 {
        grid.get(self.index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DiscrepancyOutcome {
    Selected(RuleOutcome),
    /// No residual met the bound.
    NoAdmissible {
        min_residual_index: usize,
        residuals: Vec<f64>,
    },
}

impl DiscrepancyOutcome {
    pub fn selected(&self) -> Option<&RuleOutcome> {
        match self {
            DiscrepancyOutcome::Selected(r) => Some(r),
            DiscrepancyOutcome::NoAdmissible { .. } => None,
        }
    }

    /// Resolves a missing crossing to the minimum-residual index.
    pub fn or_min_residual(self) -> RuleOutcome {
        match self {
            DiscrepancyOutcome::Selected(r) => r,
            DiscrepancyOutcome::NoAdmissible {
                min_residual_index,
                residuals,
            } => RuleOutcome {
                index: min_residual_index,
                diagnostics: residuals,
                fallback: true,
            },
        }
    }
}

/// First index whose residual is at most `bound`.
pub fn discrepancy_select(residuals: &[f64], bound: f64) -> Result<DiscrepancyOutcome> {
    if residuals.is_empty() {
        return Err(Error::invalid("no residuals given"));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("residuals must be finite"));
    }
    if !(bound > 0.0) {
        return Err(Error::invalid(format!("bound must be positive, got {bound}")));
    }
    match residuals.iter().position(|&r| r <= bound) {
        Some(index) => Ok(DiscrepancyOutcome::Selected(RuleOutcome {
            index,
            diagnostics: residuals.to_vec(),
            fallback: false,
        })),
        None => {
            let min_residual_index = argmin_first(residuals);
            Ok(DiscrepancyOutcome::NoAdmissible {
                min_residual_index,
                residuals: residuals.to_vec(),
            })
        }
    }
}

/// `‖x_{i+1} − x_i‖` for `i = 0..len−1`.
pub fn consecutive_distances(solutions: &[Vec<f64>]) -> Result<Vec<f64>> {
    if solutions.len() < 2 {
        return Err(Error::invalid("quasi-optimality needs at least two solutions"));
    }
    let m = solutions[0].len();
    if solutions.iter().any(|s| s.len() != m) {
        return Err(Error::dims("solutions of different lengths"));
    }
    Ok(solutions.windows(2).map(|w| dist(&w[1], &w[0])).collect())
}

/// Index minimizing the distance to the next solution; ties go to the smaller index.
pub fn quasi_opt_select(solutions: &[Vec<f64>]) -> Result<RuleOutcome> {
    let d = consecutive_distances(solutions)?;
    Ok(RuleOutcome {
        index: argmin_first(&d),
        diagnostics: d,
        fallback: false,
    })
}

fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// CSV with columns `i,alpha,residual,distance,error`; missing entries are left empty.
pub fn diagnostics_csv(
    grid: &AlphaGrid,
    residuals: Option<&[f64]>,
    distances: Option<&[f64]>,
    errors: Option<&[f64]>,
) -> String {
    let cell = |v: Option<&[f64]>, i: usize| match v.and_then(|v| v.get(i)) {
        Some(x) => format!("{x:.16e}"),
        None => String::new(),
    };
    let mut out = String::from("i,alpha,residual,distance,error\n");
    for (i, a) in grid.values.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{a:.16e},{},{},{}",
            cell(residuals, i),
            cell(distances, i),
            cell(errors, i)
        );
    }
    out
}
