//! Calibration ingest: projection of periodic receive signals onto the
//! Fourier basis, system-matrix assembly, background subtraction,
//! frequency selection and operator normalization.
//!
//! Rows are laid out coil by coil; within a coil, index by index in
//! ascending order; within an index, real part then imaginary part.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_formats::{read_vector, write_vector};
use crate::linalg::{spectral_norm, Matrix};
use crate::system::{Provenance, SystemMatrix};

/// Uniformly sampled voltage over one period `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSignal {
    pub samples: Vec<f64>,
    pub period: f64,
}

impl TimeSignal {
    pub fn new(samples: Vec<f64>, period: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("a time signal needs at least two samples"));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::invalid("signal period must be positive and finite"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("signal samples must be finite"));
        }
        Ok(Self { samples, period })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `⟨v, ψ_j⟩` for `ψ_j(t) = T^{-1/2} (−1)^j e^{i2πjt/T}` by the rectangle
/// rule on the uniform samples.
pub fn project_signal(sig: &TimeSignal, indices: &[i64]) -> Result<Vec<Complex<f64>>> {
    project_samples(&sig.samples, sig.period, indices)
}

fn project_samples(samples: &[f64], period: f64, indices: &[i64]) -> Result<Vec<Complex<f64>>> {
    let ns = samples.len();
    let weight = (period / ns as f64) / period.sqrt();
    indices
        .iter()
        .map(|&j| {
            if 2 * j.unsigned_abs() as usize >= ns {
                return Err(Error::UnresolvableFrequency { index: j, samples: ns });
            }
            let jm = j.rem_euclid(ns as i64) as usize;
            let (mut re, mut im) = (0.0, 0.0);
            for (s, &v) in samples.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                // Reduce j·s modulo N_s before forming the angle.
                let phase = 2.0 * PI * ((jm * s) % ns) as f64 / ns as f64;
                re += v * phase.cos();
                im -= v * phase.sin();
            }
            let sign = if j.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            Ok(Complex::new(sign * weight * re, sign * weight * im))
        })
        .collect()
}

/// Per-coil frequency index lists `J_ℓ` with the band/threshold that made them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyIndexSet {
    pub per_coil: Vec<Vec<i64>>,
    pub band: (f64, f64),
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Part {
    Re,
    Im,
}

/// Label of one row of the assembled system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLabel {
    pub coil: usize,
    pub index: i64,
    pub part: Part,
}

impl FrequencyIndexSet {
    /// Same index list on every coil, no thresholding.
    pub fn uniform(coils: usize, indices: Vec<i64>) -> Self {
        Self {
            per_coil: vec![indices; coils],
            band: (0.0, f64::INFINITY),
            threshold: 0.0,
        }
    }

    pub fn coils(&self) -> usize {
        self.per_coil.len()
    }

    /// `n = Σ_ℓ 2|J_ℓ|`.
    pub fn n_rows(&self) -> usize {
        self.per_coil.iter().map(|j| 2 * j.len()).sum()
    }

    pub fn row_labels(&self) -> Vec<RowLabel> {
        let mut out = Vec::with_capacity(self.n_rows());
        for (coil, js) in self.per_coil.iter().enumerate() {
            for &index in js {
                out.push(RowLabel {
                    coil,
                    index,
                    part: Part::Re,
                });
                out.push(RowLabel {
                    coil,
                    index,
                    part: Part::Im,
                });
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        for js in &self.per_coil {
            if js.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid("index lists must be strictly increasing"));
            }
        }
        Ok(())
    }
}

/// Calibration scans, empty-scanner scans and their acquisition schedule.
///
/// Acquisition order is `E_0, C_0 .. C_{G-1}, E_1, C_G .. C_{2G-1}, E_2, …`:
/// one empty scan precedes every block of `G` calibration positions and one
/// follows the last block.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSet {
    /// `scans[i][ℓ]`: position `i`, coil `ℓ`.
    pub scans: Vec<Vec<TimeSignal>>,
    /// `empty[k][ℓ]`: empty scan `k`, coil `ℓ`.
    pub empty: Vec<Vec<TimeSignal>>,
    pub empty_every: usize,
    pub concentration: f64,
}

impl CalibrationSet {
    pub fn validate(&self) -> Result<()> {
        let m = self.scans.len();
        let ke = self.empty.len();
        if m == 0 {
            return Err(Error::invalid("calibration set has no positions"));
        }
        if ke < 2 {
            return Err(Error::invalid("at least two empty scans are required"));
        }
        if self.empty_every == 0 {
            return Err(Error::invalid("empty-scan interval G must be >= 1"));
        }
        if !(self.concentration > 0.0) {
            return Err(Error::invalid("sample concentration must be positive"));
        }
        let coils = self.coils();
        if coils == 0 {
            return Err(Error::invalid("calibration set has no coils"));
        }
        let (t, ns) = (self.scans[0][0].period, self.scans[0][0].len());
        for sig_set in self.scans.iter().chain(&self.empty) {
            if sig_set.len() != coils {
                return Err(Error::dims("every scan must carry the same coil count"));
            }
            for s in sig_set {
                if s.len() != ns || s.period != t {
                    return Err(Error::dims("all signals must share T and N_s"));
                }
            }
        }
        let needed = (m - 1) / self.empty_every + 2;
        if ke < needed {
            return Err(Error::invalid(format!(
                "{m} positions with G = {} need {needed} empty scans, got {ke}",
                self.empty_every
            )));
        }
        Ok(())
    }

    pub fn coils(&self) -> usize {
        self.scans.first().map_or(0, Vec::len)
    }

    pub fn positions(&self) -> usize {
        self.scans.len()
    }

    pub fn period(&self) -> f64 {
        self.scans[0][0].period
    }

    pub fn samples_per_period(&self) -> usize {
        self.scans[0][0].len()
    }

    /// Sample-wise mean of the empty scans, per coil.
    pub fn mean_empty(&self) -> Vec<Vec<f64>> {
        let ke = self.empty.len() as f64;
        (0..self.coils())
            .map(|l| {
                let mut acc = vec![0.0; self.samples_per_period()];
                for scan in &self.empty {
                    for (a, v) in acc.iter_mut().zip(&scan[l].samples) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= ke);
                acc
            })
            .collect()
    }

    /// `(k_i, κ_i)` for calibration position `i`: the preceding empty scan and
    /// the weight it receives, `κ_i = 1 − r_i / G` with `r_i` the offset
    /// inside the block.
    pub fn bracketing(&self, i: usize) -> (usize, f64) {
        let g = self.empty_every;
        (i / g, 1.0 - (i % g) as f64 / g as f64)
    }
}

/// `Q_n` applied to one multi-coil acquisition.
pub fn project_acquisition(coils: &[&[f64]], period: f64, idx: &FrequencyIndexSet) -> Result<Vec<f64>> {
    if coils.len() != idx.coils() {
        return Err(Error::dims(format!(
            "{} coil signals for an index set over {} coils",
            coils.len(),
            idx.coils()
        )));
    }
    let mut out = Vec::with_capacity(idx.n_rows());
    for (samples, js) in coils.iter().zip(&idx.per_coil) {
        for c in project_samples(samples, period, js)? {
            out.push(c.re);
            out.push(c.im);
        }
    }
    Ok(out)
}

/// Assembled calibration system `S` and the background column `v0` in the
/// same units (both scaled by `1/c0`).
#[derive(Clone, Debug)]
pub struct Assembled {
    pub matrix: SystemMatrix,
    pub background: Vec<f64>,
}

pub fn assemble_system_matrix(cal: &CalibrationSet, idx: &FrequencyIndexSet) -> Result<Assembled> {
    cal.validate()?;
    idx.validate()?;
    let n = idx.n_rows();
    let m = cal.positions();
    let t = cal.period();
    let inv_c0 = 1.0 / cal.concentration;
    let mut s = Matrix::zeros(n, m);
    for (i, scan) in cal.scans.iter().enumerate() {
        let signals: Vec<&[f64]> = scan.iter().map(|s| s.samples.as_slice()).collect();
        let col = project_acquisition(&signals, t, idx)?;
        for (r, v) in col.into_iter().enumerate() {
            s.set(r, i, v * inv_c0);
        }
    }
    let background = measurement_background(cal, idx)?
        .into_iter()
        .map(|v| v * inv_c0)
        .collect();
    Ok(Assembled {
        matrix: SystemMatrix::raw(s),
        background,
    })
}

/// `Q_n` of the mean empty scan, unscaled: the background of a phantom
/// measurement.
pub fn measurement_background(cal: &CalibrationSet, idx: &FrequencyIndexSet) -> Result<Vec<f64>> {
    let mean = cal.mean_empty();
    let refs: Vec<&[f64]> = mean.iter().map(Vec::as_slice).collect();
    project_acquisition(&refs, cal.period(), idx)
}

/// `A = S − s0·1ᵗ`, `y = v − v0`.
///
/// `s0` is the background column in the units of `S` and `v0` the
/// background of the measurement; they differ by the calibration
/// concentration when `S` is normalized by it.
pub fn background_correct(s: &SystemMatrix, s0: &[f64], v: &[f64], v0: &[f64]) -> Result<(SystemMatrix, Vec<f64>)> {
    let n = s.rows();
    if s0.len() != n || v.len() != n || v0.len() != n {
        return Err(Error::dims(format!(
            "matrix has {n} rows; background column {}, measurement {}, measurement background {}",
            s0.len(),
            v.len(),
            v0.len()
        )));
    }
    let mut a = s.matrix.clone();
    for (i, &b) in s0.iter().enumerate() {
        a.row_mut(i).iter_mut().for_each(|x| *x -= b);
    }
    let y = v.iter().zip(v0).map(|(a, b)| a - b).collect();
    Ok((s.derived(a, Provenance::BackgroundCorrected), y))
}

/// All `j` with `|j| ≤ j_max` and `b1 ≤ |j|/T ≤ b2`, ascending.
///
/// Band edges are matched with a relative slack of `1e-12` so that a
/// frequency landing exactly on a limit is not lost to rounding of `1/T`.
pub fn band_pass_indices(b1: f64, b2: f64, period: f64, j_max: u64) -> Result<Vec<i64>> {
    if !(b1 >= 0.0) || !(b1 < b2) {
        return Err(Error::invalid(format!(
            "band limits must satisfy 0 <= b1 < b2, got b1 = {b1}, b2 = {b2}"
        )));
    }
    if !(period > 0.0) {
        return Err(Error::invalid("period must be positive"));
    }
    let lo = b1 * (1.0 - 1e-12);
    let hi = b2 * (1.0 + 1e-12);
    let jm = j_max as i64;
    Ok((-jm..=jm)
        .filter(|j| {
            let f = j.unsigned_abs() as f64 / period;
            f >= lo && f <= hi
        })
        .collect())
}

/// SNR-type quality measure `d_{ℓ,j}` over a candidate index list.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrMeasure {
    pub candidates: Vec<i64>,
    /// `values[ℓ][c]` for coil `ℓ` and candidate position `c`.
    pub values: Vec<Vec<f64>>,
    /// `(coil, index)` pairs whose background energy was zero.
    pub degenerate: Vec<(usize, i64)>,
}

impl SnrMeasure {
    pub fn get(&self, coil: usize, index: i64) -> Option<f64> {
        let c = self.candidates.iter().position(|&j| j == index)?;
        self.values.get(coil).map(|v| v[c])
    }
}

/// `d_{ℓ,j}`: mean modulus of the interpolated-background-corrected
/// calibration coefficients over the mean modulus of the mean-corrected
/// empty-scan coefficients.
///
/// A zero denominator yields `+∞` and a record in `degenerate`.
pub fn snr_measure(cal: &CalibrationSet, candidates: &[i64]) -> Result<SnrMeasure> {
    cal.validate()?;
    let t = cal.period();
    let coils = cal.coils();
    let m = cal.positions();
    let ke = cal.empty.len();
    let mean = cal.mean_empty();
    let mut values = Vec::with_capacity(coils);
    let mut degenerate = Vec::new();
    for l in 0..coils {
        let empty_coef: Vec<Vec<Complex<f64>>> = cal
            .empty
            .iter()
            .map(|e| project_signal(&e[l], candidates))
            .collect::<Result<_>>()?;
        let mean_coef = project_samples(&mean[l], t, candidates)?;
        let mut num = vec![0.0; candidates.len()];
        for (i, scan) in cal.scans.iter().enumerate() {
            let (k, kappa) = cal.bracketing(i);
            let coef = project_signal(&scan[l], candidates)?;
            for c in 0..candidates.len() {
                let mu = empty_coef[k][c] * kappa + empty_coef[k + 1][c] * (1.0 - kappa);
                num[c] += (coef[c] - mu).norm();
            }
        }
        let mut den = vec![0.0; candidates.len()];
        for e in &empty_coef {
            for c in 0..candidates.len() {
                den[c] += (e[c] - mean_coef[c]).norm();
            }
        }
        let row = (0..candidates.len())
            .map(|c| {
                let nu = num[c] / m as f64;
                let de = den[c] / ke as f64;
                if de == 0.0 {
                    warn!(
                        "zero background energy at coil {l}, index {}; treating row as noiseless",
                        candidates[c]
                    );
                    degenerate.push((l, candidates[c]));
                    f64::INFINITY
                } else {
                    nu / de
                }
            })
            .collect();
        values.push(row);
    }
    Ok(SnrMeasure {
        candidates: candidates.to_vec(),
        values,
        degenerate,
    })
}

/// Index set and row mask (over the coil-major band layout) for a selection.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSelection {
    pub indices: FrequencyIndexSet,
    pub mask: Vec<bool>,
    pub threshold: f64,
}

impl RowSelection {
    pub fn kept_rows(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

fn band_values(d: &SnrMeasure, band: &[i64]) -> Result<Vec<Vec<f64>>> {
    d.values
        .iter()
        .enumerate()
        .map(|(l, _)| {
            band.iter()
                .map(|&j| {
                    d.get(l, j)
                        .ok_or_else(|| Error::invalid(format!("band index {j} has no quality value")))
                })
                .collect()
        })
        .collect()
}

fn selection_from_flags(keep: &[Vec<bool>], band: &[i64], band_limits: (f64, f64), threshold: f64) -> RowSelection {
    let mut per_coil = Vec::with_capacity(keep.len());
    let mut mask = Vec::with_capacity(keep.len() * band.len() * 2);
    for flags in keep {
        let mut js = Vec::new();
        for (&j, &k) in band.iter().zip(flags) {
            mask.push(k);
            mask.push(k);
            if k {
                js.push(j);
            }
        }
        js.sort_unstable();
        per_coil.push(js);
    }
    RowSelection {
        indices: FrequencyIndexSet {
            per_coil,
            band: band_limits,
            threshold,
        },
        mask,
        threshold,
    }
}

/// Keeps the band indices whose quality reaches `threshold`, on every coil.
pub fn select_rows(d: &SnrMeasure, band: &[i64], threshold: f64) -> Result<RowSelection> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid("threshold must be nonnegative"));
    }
    let vals = band_values(d, band)?;
    let keep: Vec<Vec<bool>> = vals
        .iter()
        .map(|row| row.iter().map(|&v| v >= threshold).collect())
        .collect();
    Ok(selection_from_flags(&keep, band, (0.0, f64::INFINITY), threshold))
}

/// Selects exactly `k_target` rows (`k_target / 2` Re/Im pairs) with the
/// largest quality values; ties go to the smaller `(coil, position in band)`.
/// The reported threshold is the quality of the last kept pair, the largest
/// threshold whose plain thresholding keeps at least `k_target` rows.
pub fn rows_for_target(d: &SnrMeasure, band: &[i64], k_target: usize) -> Result<RowSelection> {
    if !k_target.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "target row count {k_target} is odd; rows come in Re/Im pairs"
        )));
    }
    let vals = band_values(d, band)?;
    let total = 2 * vals.len() * band.len();
    if k_target == 0 || k_target > total {
        return Err(Error::invalid(format!(
            "target row count {k_target} outside 1..={total}"
        )));
    }
    let mut order: Vec<(usize, usize)> = (0..vals.len())
        .flat_map(|l| (0..band.len()).map(move |c| (l, c)))
        .collect();
    // Stable sort keeps the lexicographic (coil, index) order among ties.
    order.sort_by(|a, b| vals[b.0][b.1].total_cmp(&vals[a.0][a.1]));
    let pairs = k_target / 2;
    let mut keep = vec![vec![false; band.len()]; vals.len()];
    for &(l, c) in &order[..pairs] {
        keep[l][c] = true;
    }
    let (l, c) = order[pairs - 1];
    let tau = vals[l][c];
    Ok(selection_from_flags(&keep, band, (0.0, f64::INFINITY), tau))
}

/// Operator scaled to unit spectral norm.
#[derive(Clone, Debug)]
pub struct Normalized {
    pub matrix: SystemMatrix,
    pub data: Vec<f64>,
    pub scale: f64,
}

pub const NORMALIZE_TOL: f64 = 1e-10;
pub const NORMALIZE_MAX_ITER: usize = 10_000;
pub const NORMALIZE_SEED: u64 = 0x5eed_0001;

/// `A/s`, `y/s` with `s ≈ ‖A‖₂` from power iteration on `AᵗA`.
pub fn normalize_operator(a: &SystemMatrix, y: &[f64]) -> Result<Normalized> {
    if y.len() != a.rows() {
        return Err(Error::dims(format!("data of length {} for {} rows", y.len(), a.rows())));
    }
    if a.matrix.as_slice().iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let s = spectral_norm(&a.matrix, NORMALIZE_TOL, NORMALIZE_MAX_ITER, NORMALIZE_SEED);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::ZeroMatrix);
    }
    let inv = 1.0 / s;
    Ok(Normalized {
        matrix: a.derived(a.matrix.scaled(inv), Provenance::Normalized { scale: s }),
        data: y.iter().map(|v| v * inv).collect(),
        scale: s,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationManifest {
    period: f64,
    samples_per_period: usize,
    coils: usize,
    positions: usize,
    empty_scans: usize,
    empty_every: usize,
    concentration: f64,
    /// Acquisition order as file names.
    order: Vec<String>,
}

fn scan_name(empty: bool, i: usize) -> String {
    if empty {
        format!("empty_{i:05}.vec")
    } else {
        format!("cal_{i:05}.vec")
    }
}

/// Writes a calibration set as a directory: one `VEC1` file per scan
/// (coil signals concatenated) and `manifest.toml`.
pub fn write_calibration_dir(cal: &CalibrationSet, dir: impl AsRef<Path>) -> Result<()> {
    cal.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let concat = |scan: &[TimeSignal]| -> Vec<f64> { scan.iter().flat_map(|s| s.samples.iter().copied()).collect() };
    let mut order = Vec::new();
    let g = cal.empty_every;
    let mut next_empty = 0;
    for i in 0..cal.positions() {
        if i % g == 0 {
            order.push(scan_name(true, next_empty));
            next_empty += 1;
        }
        order.push(scan_name(false, i));
    }
    while next_empty < cal.empty.len() {
        order.push(scan_name(true, next_empty));
        next_empty += 1;
    }
    for (i, scan) in cal.scans.iter().enumerate() {
        write_vector(dir.join(scan_name(false, i)), &concat(scan))?;
    }
    for (k, scan) in cal.empty.iter().enumerate() {
        write_vector(dir.join(scan_name(true, k)), &concat(scan))?;
    }
    let manifest = CalibrationManifest {
        period: cal.period(),
        samples_per_period: cal.samples_per_period(),
        coils: cal.coils(),
        positions: cal.positions(),
        empty_scans: cal.empty.len(),
        empty_every: g,
        concentration: cal.concentration,
        order,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_calibration_dir(dir: impl AsRef<Path>) -> Result<CalibrationSet> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.toml");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let man: CalibrationManifest =
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let split = |v: Vec<f64>| -> Result<Vec<TimeSignal>> {
        if v.len() != man.coils * man.samples_per_period {
            return Err(Error::dims(format!(
                "scan holds {} samples, manifest implies {}",
                v.len(),
                man.coils * man.samples_per_period
            )));
        }
        v.chunks_exact(man.samples_per_period)
            .map(|c| TimeSignal::new(c.to_vec(), man.period))
            .collect()
    };
    let scans = (0..man.positions)
        .map(|i| split(read_vector(dir.join(scan_name(false, i)))?))
        .collect::<Result<Vec<_>>>()?;
    let empty = (0..man.empty_scans)
        .map(|k| split(read_vector(dir.join(scan_name(true, k)))?))
        .collect::<Result<Vec<_>>>()?;
    let cal = CalibrationSet {
        scans,
        empty,
        empty_every: man.empty_every,
        concentration: man.concentration,
    };
    cal.validate()?;
    Ok(cal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(samples: Vec<f64>) -> TimeSignal {
        TimeSignal::new(samples, 1.0).unwrap()
    }

    /// Samples of `Re ψ_j` at `t_s = s T / N_s`.
    fn basis_re(j: i64, ns: usize, period: f64) -> Vec<f64> {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        (0..ns)
            .map(|s| {
                let t = s as f64 * period / ns as f64;
                sign * period.powf(-0.5) * (2.0 * PI * j as f64 * t / period).cos()
            })
            .collect()
    }

    #[test]
    fn dc_projection() {
        let t = 2.5;
        let c = project_signal(&TimeSignal::new(vec![3.0; 16], t).unwrap(), &[0]).unwrap();
        assert!((c[0].re - 3.0 * t.sqrt()).abs() < 1e-12);
        assert_eq!(c[0].im, 0.0);
    }

    #[test]
    fn orthonormality_by_quadrature() {
        let t = 0.7;
        let s = TimeSignal::new(basis_re(5, 64, t), t).unwrap();
        let c = project_signal(&s, &[5, 3, -5]).unwrap();
        assert!((c[0].re - 0.5).abs() < 1e-12 && c[0].im.abs() < 1e-12);
        assert!(c[1].norm() < 1e-12);
        assert!((c[2].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_projects_to_exact_zero() {
        let c = project_signal(&sig(vec![0.0; 8]), &[-3, 0, 2]).unwrap();
        assert!(c.iter().all(|z| z.re == 0.0 && z.im == 0.0));
    }

    #[test]
    fn nyquist_index_is_unresolvable() {
        let err = project_signal(&sig(vec![1.0; 8]), &[4]).unwrap_err();
        assert!(matches!(err, Error::UnresolvableFrequency { index: 4, .. }));
        assert!(project_signal(&sig(vec![1.0; 8]), &[-3]).is_ok());
    }

    fn tiny_cal(scan: Vec<Vec<f64>>, empty: Vec<Vec<f64>>, g: usize) -> CalibrationSet {
        CalibrationSet {
            scans: scan.into_iter().map(|s| vec![sig(s)]).collect(),
            empty: empty.into_iter().map(|s| vec![sig(s)]).collect(),
            empty_every: g,
            concentration: 1.0,
        }
    }

    #[test]
    fn background_only_sample_gives_zero_operator() {
        let e1 = vec![1.0, 0.5, -0.25, 0.0, 0.75, 0.1, 0.2, -0.3];
        let e2 = vec![0.0, 0.5, 0.25, 0.5, 0.25, 0.3, 0.0, -0.1];
        let mean: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| (a + b) / 2.0).collect();
        let mut cal = tiny_cal(vec![mean], vec![e1, e2], 1);
        cal.concentration = 4.0;
        let idx = FrequencyIndexSet::uniform(1, vec![0, 1, 2]);
        let asm = assemble_system_matrix(&cal, &idx).unwrap();
        for r in 0..asm.matrix.rows() {
            assert!((asm.matrix.matrix.get(r, 0) - asm.background[r]).abs() < 1e-15);
        }
        let v = vec![0.0; 6];
        let (a, _) = background_correct(&asm.matrix, &asm.background, &v, &v).unwrap();
        assert!(a.matrix.as_slice().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn single_index_column_matches_projection() {
        let s = vec![0.3, -1.0, 2.0, 0.5, 0.0, 1.5];
        let mut cal = tiny_cal(vec![s.clone()], vec![vec![0.0; 6], vec![0.0; 6]], 1);
        cal.concentration = 2.0;
        let idx = FrequencyIndexSet::uniform(1, vec![2]);
        let asm = assemble_system_matrix(&cal, &idx).unwrap();
        let c = project_signal(&sig(s), &[2]).unwrap()[0];
        assert_eq!(asm.matrix.rows(), 2);
        assert!((asm.matrix.matrix.get(0, 0) - c.re / 2.0).abs() < 1e-15);
        assert!((asm.matrix.matrix.get(1, 0) - c.im / 2.0).abs() < 1e-15);
    }

    #[test]
    fn row_layout_is_coil_index_part() {
        let idx = FrequencyIndexSet {
            per_coil: vec![vec![3], vec![1]],
            band: (0.0, f64::INFINITY),
            threshold: 0.0,
        };
        let labels = idx.row_labels();
        let expect = [(0, 3, Part::Re), (0, 3, Part::Im), (1, 1, Part::Re), (1, 1, Part::Im)];
        for (l, (c, j, p)) in labels.iter().zip(expect) {
            assert_eq!((l.coil, l.index, l.part), (c, j, p));
        }
        // Assembled rows follow the same layout.
        let s1 = basis_re(3, 16, 1.0);
        let s2 = basis_re(1, 16, 1.0);
        let cal = CalibrationSet {
            scans: vec![vec![sig(s1), sig(s2)]],
            empty: vec![vec![sig(vec![0.0; 16]), sig(vec![0.0; 16])]; 2],
            empty_every: 1,
            concentration: 1.0,
        };
        let asm = assemble_system_matrix(&cal, &idx).unwrap();
        let col = asm.matrix.matrix.column(0);
        assert!((col[0] - 0.5).abs() < 1e-12 && col[1].abs() < 1e-12);
        assert!((col[2] - 0.5).abs() < 1e-12 && col[3].abs() < 1e-12);
    }

    #[test]
    fn background_correct_cases() {
        let s = SystemMatrix::raw(Matrix::from_fn(2, 3, |i, _| [1.0, 2.0][i]));
        let v0 = [1.0, 2.0];
        let (a, y) = background_correct(&s, &v0, &v0, &v0).unwrap();
        assert!(a.matrix.as_slice().iter().all(|&x| x == 0.0));
        assert!(y.iter().all(|&x| x == 0.0));
        assert_eq!(a.provenance.last(), Some(&Provenance::BackgroundCorrected));
        assert!(background_correct(&s, &v0, &[1.0], &v0).is_err());
    }

    #[test]
    fn band_pass_examples() {
        assert_eq!(
            band_pass_indices(0.0, f64::INFINITY, 1.0, 3).unwrap(),
            (-3..=3).collect::<Vec<_>>()
        );
        assert_eq!(band_pass_indices(2.0, 4.0, 1.0, 10).unwrap(), vec![-4, -3, -2, 2, 3, 4]);
        let got = band_pass_indices(80e3, 625e3, 1.0 / 40e3, 20).unwrap();
        let expect: Vec<i64> = (-15..=-2).chain(2..=15).collect();
        assert_eq!(got, expect);
        assert!(band_pass_indices(5.0, 5.0, 1.0, 3).is_err());
    }

    fn measure(values: Vec<Vec<f64>>, candidates: Vec<i64>) -> SnrMeasure {
        SnrMeasure {
            candidates,
            values,
            degenerate: vec![],
        }
    }

    #[test]
    fn select_rows_examples() {
        let d = measure(vec![vec![1.0, 5.0, 3.0]], vec![1, 2, 3]);
        let all = select_rows(&d, &[1, 2, 3], 0.0).unwrap();
        assert_eq!(all.indices.per_coil, vec![vec![1, 2, 3]]);
        let none = select_rows(&d, &[1, 2, 3], f64::INFINITY).unwrap();
        assert!(none.indices.per_coil[0].is_empty());
        let some = select_rows(&d, &[1, 2, 3], 3.0).unwrap();
        assert_eq!(some.indices.per_coil, vec![vec![2, 3]]);
        assert_eq!(some.mask, vec![false, false, true, true, true, true]);
        assert_eq!(some.indices.n_rows(), some.kept_rows());
    }

    #[test]
    fn rows_for_target_examples() {
        let d = measure(vec![vec![1.0, 5.0, 3.0], vec![2.0, 0.5, 4.0]], vec![1, 2, 3]);
        let band = [1, 2, 3];
        let full = rows_for_target(&d, &band, 12).unwrap();
        assert!(full.mask.iter().all(|&b| b));
        assert!(full.threshold <= 0.5);
        let top = rows_for_target(&d, &band, 2).unwrap();
        assert_eq!(top.indices.per_coil, vec![vec![2], vec![]]);
        assert_eq!(top.threshold, 5.0);
        assert!(rows_for_target(&d, &band, 3).is_err());
        assert!(rows_for_target(&d, &band, 14).is_err());
    }

    #[test]
    fn ties_break_by_coil_then_index() {
        let d = measure(vec![vec![2.0, 7.0, 2.0], vec![2.0, 2.0, 9.0]], vec![1, 2, 3]);
        let band = [1, 2, 3];
        let sel = rows_for_target(&d, &band, 6).unwrap();
        // Oracle: stable sort of (−d, coil, position).
        let mut all: Vec<(f64, usize, usize)> = (0..2)
            .flat_map(|l| (0..3).map(move |c| (l, c)))
            .map(|(l, c)| (d.values[l][c], l, c))
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut expect = vec![vec![], vec![]];
        for &(_, l, c) in &all[..3] {
            expect[l].push(band[c]);
        }
        expect.iter_mut().for_each(|v: &mut Vec<i64>| v.sort());
        assert_eq!(sel.indices.per_coil, expect);
        assert_eq!(sel.indices.per_coil, vec![vec![1, 2], vec![3]]);
        assert_eq!(sel.threshold, 2.0);
    }

    #[test]
    fn identical_backgrounds_give_zero_quality() {
        let e = vec![0.2, -0.4, 0.1, 0.9, 0.3, 0.0, -0.2, 0.5];
        let cal = tiny_cal(vec![e.clone(), e.clone()], vec![e.clone(), vec![0.0; 8], e.clone()], 1);
        // Position 0 sits right after empty 0 (κ = 1) so its background is e.
        let d = snr_measure(&cal, &[1]).unwrap();
        // Position 1 sits after the zero empty scan; its numerator is |⟨e,ψ⟩|.
        assert!(d.values[0][0].is_finite());

        let same = tiny_cal(vec![e.clone(), e.clone()], vec![e.clone(), e.clone()], 2);
        let d = snr_measure(&same, &[1, 2]).unwrap();
        // Zero numerator, zero denominator: degenerate, reported as +∞.
        assert!(d.values[0].iter().all(|v| v.is_infinite()));
        assert_eq!(d.degenerate.len(), 2);
    }

    #[test]
    fn zero_numerator_with_noisy_background() {
        let e1 = vec![0.2, -0.4, 0.1, 0.9, 0.3, 0.0, -0.2, 0.5];
        let e2 = vec![0.1, 0.4, -0.3, 0.2, 0.0, 0.6, 0.1, -0.5];
        // G = 2: position 0 has κ = 1 (background e1), position 1 κ = 1/2.
        let half: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        let cal = tiny_cal(vec![e1.clone(), half], vec![e1, e2], 2);
        let d = snr_measure(&cal, &[1, 2, 3]).unwrap();
        assert!(d.values[0].iter().all(|&v| v.abs() < 1e-12));
        assert!(d.degenerate.is_empty());
    }

    #[test]
    fn unit_numerator_identical_empties_is_infinite() {
        let ns = 16;
        let e = vec![0.0; ns];
        let s = basis_re(2, ns, 1.0);
        let cal = tiny_cal(vec![s.clone(), s], vec![e.clone(), e], 2);
        let d = snr_measure(&cal, &[2]).unwrap();
        assert!(d.values[0][0].is_infinite());
        assert_eq!(d.degenerate, vec![(0, 2)]);
    }

    #[test]
    fn schedule_requires_enough_empty_scans() {
        let e = vec![0.0; 4];
        let cal = tiny_cal(vec![e.clone(); 4], vec![e.clone(), e.clone()], 2);
        assert!(cal.validate().is_err());
        let ok = tiny_cal(vec![e.clone(); 4], vec![e.clone(), e.clone(), e], 2);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.bracketing(3), (1, 0.5));
        assert_eq!(ok.bracketing(2), (1, 1.0));
    }

    #[test]
    fn normalize_scaled_identity() {
        let a = SystemMatrix::raw(Matrix::identity(4).scaled(3.0));
        let out = normalize_operator(&a, &[3.0; 4]).unwrap();
        assert!((out.scale - 3.0).abs() < 1e-12);
        for i in 0..4 {
            assert!((out.matrix.matrix.get(i, i) - 1.0).abs() < 1e-12);
        }
        assert!(out.data.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(matches!(
            normalize_operator(&SystemMatrix::raw(Matrix::zeros(2, 2)), &[0.0; 2]),
            Err(Error::ZeroMatrix)
        ));
    }

    #[test]
    fn normalize_rank_one() {
        let u = [2.0, 0.0, 0.0];
        let v = [3.0, 4.0];
        let a = SystemMatrix::raw(Matrix::from_fn(3, 2, |i, j| u[i] * v[j]));
        let out = normalize_operator(&a, &[0.0; 3]).unwrap();
        assert!((out.scale - 10.0).abs() < 1e-8);
    }
}
