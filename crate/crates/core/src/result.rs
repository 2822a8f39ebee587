use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_formats::{vector_from_csv, vector_to_csv, write_text};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverTag {
    Kaczmarz,
    FilteredInverse,
    ClassicFilteredInverse,
}

/// A reconstructed concentration vector and how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub x: Vec<f64>,
    pub alpha: f64,
    pub solver: SolverTag,
    pub iterations: usize,
    /// `‖A x − y‖` for the operator the solver was given.
    pub residual_norm: f64,
    pub wall_time: Duration,
    /// Tikhonov objective at the end of each sweep, when requested.
    pub objective_trace: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    alpha: f64,
    solver: SolverTag,
    iterations: usize,
    residual_norm: f64,
    wall_time_seconds: f64,
    len: usize,
}

impl ReconstructionResult {
    /// Writes `x.csv` and `result.toml` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(dir.join("x.csv"), &vector_to_csv(&self.x))?;
        let meta = Metadata {
            alpha: self.alpha,
            solver: self.solver,
            iterations: self.iterations,
            residual_norm: self.residual_norm,
            wall_time_seconds: self.wall_time.as_secs_f64(),
            len: self.x.len(),
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Parse(e.to_string()))?;
        write_text(dir.join("result.toml"), &text)
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let meta: Metadata = toml::from_str(&read("result.toml")?).map_err(|e| Error::Parse(e.to_string()))?;
        let x = vector_from_csv(&read("x.csv")?)?;
        if x.len() != meta.len {
            return Err(Error::dims(format!(
                "x.csv holds {} values, metadata says {}",
                x.len(),
                meta.len
            )));
        }
        Ok(Self {
            x,
            alpha: meta.alpha,
            solver: meta.solver,
            iterations: meta.iterations,
            residual_norm: meta.residual_norm,
            wall_time: Duration::from_secs_f64(meta.wall_time_seconds.max(0.0)),
            objective_trace: Vec::new(),
        })
    }
}
