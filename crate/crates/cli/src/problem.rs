//! Building or loading the linear system a pipeline works on.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mpirecon_core::io_formats::{read_matrix, read_vector};
use mpirecon_core::linalg::{dist, gaussian_vec, norm2, seeded_rng};
use mpirecon_core::noise::{apply_whitening, estimate_covariance, whitening_from, CovarianceKind};
use mpirecon_core::synth::{
    cone_phantom, heteroscedastic_variances, make_problem, synth_operator, ConeSpec, SpectrumSpec, SyntheticProblem,
};
use mpirecon_core::{Axis, CovarianceModel, Matrix, SystemMatrix, VoxelGrid};
use serde::Serialize;

use crate::config::{PhantomKind, ProblemConfig, ProblemSource, SpectrumKind};
use crate::error::{CliError, CliResult};
use crate::manifest::io_error;

pub const DEFAULT_SPACING: [f64; 3] = [2.0, 2.0, 1.0];

/// Everything needed to generate a synthetic problem.
#[derive(Clone, Debug, Serialize)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub spectrum: SpectrumSpec,
    pub seed: u64,
    pub noise_level: f64,
    pub variance_ratio: f64,
    pub empty_scans: usize,
    pub phantom: PhantomKind,
    pub grid: Option<VoxelGrid>,
    pub cone_axis: Axis,
}

impl SynthSpec {
    pub fn from_config(p: &ProblemConfig) -> CliResult<Self> {
        let grid = grid_from(p.grid, p.spacing)?;
        let cols = p
            .cols
            .or_else(|| grid.map(|g| g.len()))
            .ok_or_else(|| CliError::usage("synthetic problem needs cols or grid"))?;
        Ok(Self {
            rows: p.rows.ok_or_else(|| CliError::usage("synthetic problem needs rows"))?,
            cols,
            spectrum: spectrum(p.spectrum, p.decay),
            seed: p.seed,
            noise_level: p.noise_level,
            variance_ratio: p.variance_ratio,
            empty_scans: p.empty_scans,
            phantom: p.phantom,
            grid,
            cone_axis: p.cone_axis.unwrap_or(Axis::Z),
        })
    }
}

pub fn spectrum(kind: SpectrumKind, decay: f64) -> SpectrumSpec {
    match kind {
        SpectrumKind::Algebraic => SpectrumSpec::Algebraic { rate: decay },
        SpectrumKind::Exponential => SpectrumSpec::Exponential { rho: decay },
    }
}

pub fn grid_from(dims: Option<[usize; 3]>, spacing: Option<[f64; 3]>) -> CliResult<Option<VoxelGrid>> {
    match dims {
        Some(d) => Ok(Some(VoxelGrid::new(d, spacing.unwrap_or(DEFAULT_SPACING), [0.0; 3])?)),
        None if spacing.is_some() => Err(CliError::usage("spacing given without a grid")),
        None => Ok(None),
    }
}

/// Seeded operator, phantom and heteroscedastic Gaussian noise whose
/// expected norm is `noise_level · ‖A x†‖`.
pub fn build_synthetic(spec: &SynthSpec) -> CliResult<SyntheticProblem> {
    if !(spec.noise_level >= 0.0) || !(spec.variance_ratio >= 1.0) {
        return Err(CliError::usage(
            "noise level must be nonnegative and the variance ratio at least 1",
        ));
    }
    let a = synth_operator(spec.rows, spec.cols, &spec.spectrum, spec.seed)?;
    let x_true = match spec.phantom {
        PhantomKind::Random => {
            let mut rng = seeded_rng(spec.seed.wrapping_add(1));
            gaussian_vec(spec.cols, &mut rng)
                .into_iter()
                .map(|v| v.max(0.0))
                .collect()
        }
        PhantomKind::Cone => {
            let grid = spec.grid.ok_or_else(|| CliError::usage("cone phantom needs a grid"))?;
            if grid.len() != spec.cols {
                return Err(CliError::usage(format!(
                    "grid has {} voxels but the operator {} columns",
                    grid.len(),
                    spec.cols
                )));
            }
            cone_phantom(&grid, &ConeSpec::shape_phantom().along(spec.cone_axis), 1.0)?
        }
    };
    let y_norm = norm2(&a.matrix.matvec(&x_true));
    let mut var = heteroscedastic_variances(spec.rows, 1.0, spec.variance_ratio, spec.seed.wrapping_add(2));
    let total: f64 = var.iter().sum();
    let target = (spec.noise_level * y_norm).powi(2);
    var.iter_mut().for_each(|v| *v *= target / total);
    let noise = CovarianceModel::diagonal(vec![0.0; spec.rows], var)?;
    Ok(make_problem(
        &a,
        &x_true,
        &noise,
        spec.empty_scans,
        spec.seed.wrapping_add(3),
    )?)
}

/// The system as handed to the methods, after optional whitening.
#[derive(Clone, Debug)]
pub struct Problem {
    pub a: Matrix,
    pub y: Vec<f64>,
    /// Noise-free data in the same coordinates as `y`.
    pub y_true: Option<Vec<f64>>,
    pub truth: Option<Vec<f64>>,
    pub empty_scans: Vec<Vec<f64>>,
    /// Per-row quality, larger is better.
    pub quality: Vec<f64>,
    /// `‖y − y_true‖` or its configured estimate.
    pub delta: Option<f64>,
    pub grid: Option<VoxelGrid>,
}

impl Problem {
    pub fn from_synthetic(p: &SyntheticProblem, grid: Option<VoxelGrid>) -> Self {
        Self {
            a: p.a.matrix.clone(),
            y: p.y.clone(),
            y_true: Some(p.y_true.clone()),
            truth: Some(p.x_true.clone()),
            empty_scans: p.empty_scans.clone(),
            quality: Vec::new(),
            delta: Some(p.delta),
            grid,
        }
    }

    pub fn from_files(p: &ProblemConfig, base: &Path) -> CliResult<Self> {
        let need = |f: &Option<PathBuf>, what: &str| {
            f.as_ref()
                .map(|f| resolve(base, f))
                .ok_or_else(|| CliError::usage(format!("file problem needs {what}")))
        };
        let a = read_matrix(need(&p.a, "a")?)?;
        let y = read_vector(need(&p.y, "y")?)?;
        if y.len() != a.rows() {
            return Err(CliError::usage(format!(
                "y has {} entries for a matrix with {} rows",
                y.len(),
                a.rows()
            )));
        }
        let truth = p.truth.as_ref().map(|t| read_vector(resolve(base, t))).transpose()?;
        let empty_scans = match &p.empty_dir {
            Some(d) => read_empty_dir(&resolve(base, d))?,
            None => Vec::new(),
        };
        let quality = p
            .quality
            .as_ref()
            .map(|q| read_vector(resolve(base, q)))
            .transpose()?
            .unwrap_or_default();
        Ok(Self {
            a,
            y,
            y_true: None,
            truth,
            empty_scans,
            quality,
            delta: p.delta,
            grid: grid_from(p.grid, p.spacing)?,
        })
    }

    /// Diagonal whitening estimated from the empty scans.
    pub fn whiten(&mut self) -> CliResult<()> {
        if self.empty_scans.len() < 2 {
            return Err(CliError::usage("whitening needs at least two empty scans"));
        }
        let model = estimate_covariance(&self.empty_scans, CovarianceKind::Diagonal)?;
        let w = whitening_from(&model, model.default_floor())?;
        let (aw, yw) = apply_whitening(&w, &SystemMatrix::raw(self.a.clone()), &self.y, &model.mean)?;
        self.a = aw.matrix;
        self.y = yw;
        self.empty_scans = self
            .empty_scans
            .iter()
            .map(|e| w.apply(&mpirecon_core::linalg::sub(e, &model.mean)))
            .collect();
        match &self.y_true {
            Some(t) => {
                let t = w.apply(t);
                self.delta = Some(dist(&self.y, &t));
                self.y_true = Some(t);
            }
            None if self.delta.is_some() => {
                warn!("configured delta refers to unwhitened data; dropping it");
                self.delta = None;
            }
            None => {}
        }
        Ok(())
    }

    /// Fills in `quality` when none was supplied: `‖a_i‖ / σ_i` with `σ_i`
    /// estimated from the empty scans, or `‖a_i‖` without them.
    pub fn ensure_quality(&mut self) -> CliResult<()> {
        if !self.quality.is_empty() {
            if self.quality.len() != self.a.rows() {
                return Err(CliError::usage(format!(
                    "quality has {} entries for {} rows",
                    self.quality.len(),
                    self.a.rows()
                )));
            }
            return Ok(());
        }
        let sd = if self.empty_scans.len() >= 2 {
            let model = estimate_covariance(&self.empty_scans, CovarianceKind::Diagonal)?;
            let floor = model.default_floor();
            model.variances().into_iter().map(|v| v.max(floor).sqrt()).collect()
        } else {
            vec![1.0; self.a.rows()]
        };
        self.quality = self.a.iter_rows().zip(&sd).map(|(r, s)| norm2(r) / s).collect();
        Ok(())
    }
}

pub fn load_problem(p: &ProblemConfig, base: &Path, whiten: bool) -> CliResult<(Problem, Option<SyntheticProblem>)> {
    let (mut problem, synth) = match p.source {
        ProblemSource::Synth => {
            let spec = SynthSpec::from_config(p)?;
            let sp = build_synthetic(&spec)?;
            info!("synthetic problem {}×{}, δ = {:.3e}", spec.rows, spec.cols, sp.delta);
            (Problem::from_synthetic(&sp, spec.grid), Some(sp))
        }
        ProblemSource::Files => (Problem::from_files(p, base)?, None),
    };
    if let Some(t) = &problem.truth {
        if t.len() != problem.a.cols() {
            return Err(CliError::usage(format!(
                "truth has {} entries for {} unknowns",
                t.len(),
                problem.a.cols()
            )));
        }
    }
    if let Some(g) = &problem.grid {
        if g.len() != problem.a.cols() {
            return Err(CliError::usage(format!(
                "grid has {} voxels for {} unknowns",
                g.len(),
                problem.a.cols()
            )));
        }
    }
    if whiten {
        problem.whiten()?;
    }
    problem.ensure_quality()?;
    Ok((problem, synth))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// All `empty_XXXXX.vec` files of a directory, in name order.
pub fn read_empty_dir(dir: &Path) -> CliResult<Vec<Vec<f64>>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("empty_") && n.ends_with(".vec"))
        })
        .collect();
    names.sort();
    names.iter().map(|p| read_vector(p).map_err(CliError::from)).collect()
}
