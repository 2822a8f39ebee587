//! Side-by-side evaluation of several reconstructions.

use std::fmt::Write as _;
use std::time::Duration;

use mpirecon_core::linalg::{dist, norm2};
use mpirecon_core::{Error, ReconstructionResult};

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub name: String,
    pub alpha: f64,
    /// `‖x − x†‖ / ‖x†‖`, or the plain distance when `x† = 0`.
    pub rel_error: Option<f64>,
    pub residual: f64,
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub entries: Vec<MethodSummary>,
    /// `distances[i][j] = ‖x_i − x_j‖`.
    pub distances: Vec<Vec<f64>>,
}

pub fn compare_methods(
    results: &[(String, ReconstructionResult)],
    truth: Option<&[f64]>,
) -> Result<CompareReport, Error> {
    let m = results
        .first()
        .map(|(_, r)| r.x.len())
        .or(truth.map(<[f64]>::len))
        .unwrap_or(0);
    for (name, r) in results {
        if r.x.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{name} has {} unknowns, expected {m}",
                r.x.len()
            )));
        }
    }
    if let Some(t) = truth {
        if t.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "truth has {} unknowns, results have {m}",
                t.len()
            )));
        }
    }
    let entries = results
        .iter()
        .map(|(name, r)| MethodSummary {
            name: name.clone(),
            alpha: r.alpha,
            rel_error: truth.map(|t| relative_error(&r.x, t)),
            residual: r.residual_norm,
            wall_time: r.wall_time,
        })
        .collect();
    let distances = results
        .iter()
        .map(|(_, a)| results.iter().map(|(_, b)| dist(&a.x, &b.x)).collect())
        .collect();
    Ok(CompareReport { entries, distances })
}

pub fn relative_error(x: &[f64], truth: &[f64]) -> f64 {
    let d = dist(x, truth);
    let n = norm2(truth);
    if n > 0.0 {
        d / n
    } else {
        d
    }
}

impl CompareReport {
    /// `method,alpha,rel_error,residual`; wall times are left to the timing report.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,alpha,rel_error,residual\n");
        for e in &self.entries {
            let err = e.rel_error.map(|v| format!("{v:.16e}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.16e},{err},{:.16e}", e.name, e.alpha, e.residual);
        }
        out
    }

    pub fn distances_csv(&self) -> String {
        let mut out = String::from("method");
        for e in &self.entries {
            out.push(',');
            out.push_str(&e.name);
        }
        out.push('\n');
        for (e, row) in self.entries.iter().zip(&self.distances) {
            out.push_str(&e.name);
            for d in row {
                let _ = write!(out, ",{d:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = write!(out, "{:<12} alpha {:.3e}  residual {:.4e}", e.name, e.alpha, e.residual);
            if let Some(err) = e.rel_error {
                let _ = write!(out, "  rel. error {err:.4e}");
            }
            let _ = writeln!(out, "  {:.3} ms", e.wall_time.as_secs_f64() * 1e3);
        }
        out
    }
}
