//! Seeded test problems: operators with prescribed spectra, a cone phantom,
//! and Gaussian measurement noise with simulated empty scans.

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_formats::{read_matrix, read_vector, write_matrix, write_vector, Axis, VoxelGrid};
use crate::linalg::{gaussian_dmatrix, gaussian_vec, norm2, orthonormalize, seeded_rng, symmetric_eigen, Matrix};
use crate::noise::{read_covariance, write_covariance, Covariance, CovarianceModel};
use crate::system::SystemMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SpectrumSpec {
    /// `σ_i = i^{-rate}`, `i = 1, 2, …`.
    Algebraic {
        rate: f64,
    },
    /// `σ_i = ρ^i`, `i = 0, 1, …`.
    Exponential {
        rho: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl SpectrumSpec {
    pub fn values(&self, size: usize) -> Result<Vec<f64>> {
        let s = match self {
            SpectrumSpec::Algebraic { rate } => {
                if !(*rate > 0.0) {
                    return Err(Error::invalid("algebraic rate must be positive"));
                }
                (1..=size).map(|i| (i as f64).powf(-rate)).collect()
            }
            SpectrumSpec::Exponential { rho } => {
                if !(*rho > 0.0 && *rho < 1.0) {
                    return Err(Error::invalid("exponential ratio must lie in (0, 1)"));
                }
                (0..size).map(|i| rho.powi(i as i32)).collect()
            }
            SpectrumSpec::Explicit { values } => {
                if values.len() != size {
                    return Err(Error::dims(format!(
                        "{} singular values given, {size} needed",
                        values.len()
                    )));
                }
                values.clone()
            }
        };
        if s.iter().any(|v| !(*v > 0.0)) || s.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("spectrum must be positive and nonincreasing"));
        }
        Ok(s)
    }
}

/// `A = U diag(σ) Vᵗ` with `U`, `V` the orthonormalized factors of seeded
/// Gaussian matrices (drawn `U` first, then `V`).
pub fn synth_operator(n: usize, m: usize, spec: &SpectrumSpec, seed: u64) -> Result<SystemMatrix> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("operator dimensions must be positive"));
    }
    let r = n.min(m);
    let sigma = spec.values(r)?;
    let mut rng = seeded_rng(seed);
    let mut u = orthonormalize(&gaussian_dmatrix(n, r, &mut rng));
    let v = orthonormalize(&gaussian_dmatrix(m, r, &mut rng));
    for (j, s) in sigma.iter().enumerate() {
        u.column_mut(j).scale_mut(*s);
    }
    Ok(SystemMatrix::raw(Matrix::from_dmatrix(&(u * v.transpose()))))
}

/// Truncated cone: radius `tip_radius` at the tip, opening with half-angle
/// `apex_angle_deg` between axis and lateral surface, over `height`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub tip_radius: f64,
    pub apex_angle_deg: f64,
    pub height: f64,
    pub axis: Axis,
    /// Tip centre in millimetres. By default the cone is centred in the grid
    /// laterally and along the axis, with the tip towards the low end.
    pub tip: Option<[f64; 3]>,
}

impl ConeSpec {
    /// 1 mm tip radius, 10 degrees, 22 mm high, along `z`.
    pub fn shape_phantom() -> Self {
        Self {
            tip_radius: 1.0,
            apex_angle_deg: 10.0,
            height: 22.0,
            axis: Axis::Z,
            tip: None,
        }
    }

    pub fn along(mut self, axis: Axis) -> Self {
        self.axis = axis;
        self
    }

    /// Analytic volume `πh/3 (r1² + r1 r2 + r2²)`.
    pub fn volume(&self) -> f64 {
        let r1 = self.tip_radius;
        let r2 = r1 + self.height * self.apex_angle_deg.to_radians().tan();
        std::f64::consts::PI * self.height / 3.0 * (r1 * r1 + r1 * r2 + r2 * r2)
    }

    fn tip_in(&self, grid: &VoxelGrid) -> [f64; 3] {
        self.tip.unwrap_or_else(|| {
            let ext = grid.extent();
            let mut t = [0.0; 3];
            for d in 0..3 {
                t[d] = grid.origin[d] + ext[d] / 2.0;
            }
            t[self.axis.index()] -= self.height / 2.0;
            t
        })
    }
}

/// Voxels whose centre lies in the cone get `concentration`, the rest zero.
pub fn cone_phantom(grid: &VoxelGrid, cone: &ConeSpec, concentration: f64) -> Result<Vec<f64>> {
    if !(cone.tip_radius >= 0.0) || !(cone.height > 0.0) {
        return Err(Error::invalid(
            "cone needs a nonnegative tip radius and positive height",
        ));
    }
    if !(0.0..90.0).contains(&cone.apex_angle_deg) {
        return Err(Error::invalid("cone angle must lie in [0, 90) degrees"));
    }
    let ax = cone.axis.index();
    let tip = cone.tip_in(grid);
    let slope = cone.apex_angle_deg.to_radians().tan();
    let r_top = cone.tip_radius + cone.height * slope;
    let ext = grid.extent();
    let fits = (0..3).all(|d| {
        let (lo, hi) = if d == ax {
            (tip[d], tip[d] + cone.height)
        } else {
            (tip[d] - r_top, tip[d] + r_top)
        };
        lo >= grid.origin[d] && hi <= grid.origin[d] + ext[d]
    });
    if !fits {
        warn!("cone does not fit in the grid and is clipped");
    }
    let [nx, ny, nz] = grid.dims;
    let mut x = vec![0.0; grid.len()];
    let mut flagged = 0usize;
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let c = grid.center(ix, iy, iz);
                let t = c[ax] - tip[ax];
                if !(0.0..=cone.height).contains(&t) {
                    continue;
                }
                let r2: f64 = (0..3).filter(|&d| d != ax).map(|d| (c[d] - tip[d]).powi(2)).sum();
                let r = cone.tip_radius + t * slope;
                if r2 <= r * r {
                    x[grid.linear_index(ix, iy, iz)] = concentration;
                    flagged += 1;
                }
            }
        }
    }
    if flagged == 0 {
        warn!("cone covers no voxel centre; phantom is zero");
    }
    Ok(x)
}

/// Variances spread log-uniformly from `base` to `base · ratio` over `n` rows,
/// in a seeded random row order.
pub fn heteroscedastic_variances(n: usize, base: f64, ratio: f64, seed: u64) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            base * ratio.powf(t)
        })
        .collect();
    v.shuffle(&mut seeded_rng(seed));
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticProblem {
    pub a: SystemMatrix,
    pub x_true: Vec<f64>,
    pub y_true: Vec<f64>,
    pub y: Vec<f64>,
    pub noise: CovarianceModel,
    /// `‖y − y_true‖`.
    pub delta: f64,
    pub seed: u64,
    /// Independent draws of pure background, one vector per repetition.
    pub empty_scans: Vec<Vec<f64>>,
}

type Sampler<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>;

fn noise_sampler(noise: &CovarianceModel) -> Result<Sampler<'_>> {
    match &noise.covariance {
        Covariance::Diagonal(v) => {
            let sd: Vec<f64> = v.iter().map(|s| s.sqrt()).collect();
            Ok(Box::new(move |g: &[f64]| {
                noise.mean.iter().zip(&sd).zip(g).map(|((m, s), g)| m + s * g).collect()
            }))
        }
        Covariance::Full(c) => {
            let (values, mut l) = symmetric_eigen(&c.to_dmatrix())?;
            let scale = values.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if values.iter().any(|&v| v < -1e-10 * scale.max(1.0)) {
                return Err(Error::invalid("noise covariance is not positive semidefinite"));
            }
            for (j, v) in values.iter().enumerate() {
                l.column_mut(j).scale_mut(v.max(0.0).sqrt());
            }
            let l = Matrix::from_dmatrix(&l);
            Ok(Box::new(move |g: &[f64]| {
                l.matvec(g).iter().zip(&noise.mean).map(|(a, m)| a + m).collect()
            }))
        }
    }
}

/// `y = A x† + η`, `η ~ N(μ, C)`, plus `repetitions` empty scans drawn from
/// the same distribution. The data noise is drawn before the empty scans.
pub fn make_problem(
    a: &SystemMatrix,
    x_true: &[f64],
    noise: &CovarianceModel,
    repetitions: usize,
    seed: u64,
) -> Result<SyntheticProblem> {
    let n = a.rows();
    if x_true.len() != a.cols() || noise.dim() != n {
        return Err(Error::dims(format!(
            "operator {}×{}, truth of length {}, noise of dimension {}",
            n,
            a.cols(),
            x_true.len(),
            noise.dim()
        )));
    }
    let sample = noise_sampler(noise)?;
    let mut rng = seeded_rng(seed);
    let y_true = a.matrix.matvec(x_true);
    let eta = sample(&gaussian_vec(n, &mut rng));
    let y: Vec<f64> = y_true.iter().zip(&eta).map(|(a, b)| a + b).collect();
    let delta = norm2(&crate::linalg::sub(&y, &y_true));
    let empty_scans = (0..repetitions).map(|_| sample(&gaussian_vec(n, &mut rng))).collect();
    Ok(SyntheticProblem {
        a: a.clone(),
        x_true: x_true.to_vec(),
        y_true,
        y,
        noise: noise.clone(),
        delta,
        seed,
        empty_scans,
    })
}

#[derive(Serialize, Deserialize)]
struct ProblemManifest {
    seed: u64,
    delta: f64,
    rows: usize,
    cols: usize,
    empty_scans: usize,
}

/// Writes `a.smx`, `x_true.vec`, `y_true.vec`, `y.vec`, `noise/`,
/// `empty_XXXXX.vec` and `problem.toml`.
pub fn write_problem(p: &SyntheticProblem, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(dir.join("a.smx"), &p.a.matrix)?;
    write_vector(dir.join("x_true.vec"), &p.x_true)?;
    write_vector(dir.join("y_true.vec"), &p.y_true)?;
    write_vector(dir.join("y.vec"), &p.y)?;
    write_covariance(&p.noise, dir.join("noise"))?;
    for (k, e) in p.empty_scans.iter().enumerate() {
        write_vector(dir.join(format!("empty_{k:05}.vec")), e)?;
    }
    let manifest = ProblemManifest {
        seed: p.seed,
        delta: p.delta,
        rows: p.a.rows(),
        cols: p.a.cols(),
        empty_scans: p.empty_scans.len(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    let path = dir.join("problem.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_problem(dir: impl AsRef<Path>) -> Result<SyntheticProblem> {
    let dir = dir.as_ref();
    let path = dir.join("problem.toml");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ProblemManifest = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let a = read_matrix(dir.join("a.smx"))?;
    if a.shape() != (manifest.rows, manifest.cols) {
        return Err(Error::dims("a.smx disagrees with problem.toml"));
    }
    let empty_scans = (0..manifest.empty_scans)
        .map(|k| read_vector(dir.join(format!("empty_{k:05}.vec"))))
        .collect::<Result<_>>()?;
    Ok(SyntheticProblem {
        a: SystemMatrix::raw(a),
        x_true: read_vector(dir.join("x_true.vec"))?,
        y_true: read_vector(dir.join("y_true.vec"))?,
        y: read_vector(dir.join("y.vec"))?,
        noise: read_covariance(dir.join("noise"))?,
        delta: manifest.delta,
        seed: manifest.seed,
        empty_scans,
    })
}
