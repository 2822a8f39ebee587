//! Pipeline configuration: a flat TOML file with one section per method.
//!
//! ```toml
//! methods = ["STD", "rSVD1", "rSVD2"]
//! repeats = 10
//! alpha = 1e-2
//!
//! [problem]
//! source = "synth"
//! rows = 200
//! cols = 100
//!
//! [rSVD1]
//! k = 20
//!
//! [rSVD2]
//! k = [10, 20]
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use mpirecon_core::Axis;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{line_col, CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodName {
    #[serde(rename = "STD")]
    Std,
    #[serde(rename = "SNR")]
    Snr,
    #[serde(rename = "rSVD1")]
    Rsvd1,
    #[serde(rename = "rSVD2")]
    Rsvd2,
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodName::Std => "STD",
            MethodName::Snr => "SNR",
            MethodName::Rsvd1 => "rSVD1",
            MethodName::Rsvd2 => "rSVD2",
        })
    }
}

/// A single value or a list, e.g. `k = 20` or `k = [500, 1000]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<usize> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub methods: Spanned<Vec<MethodName>>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Fixed regularization parameter; required unless `[selection]` is given.
    pub alpha: Option<f64>,
    pub output: Option<PathBuf>,
    /// Count row selection, normalization and the rSVD in the timings.
    #[serde(default)]
    pub include_preprocessing: bool,
    /// Scale every forward map to unit operator norm.
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Diagonal whitening estimated from the empty scans.
    #[serde(default)]
    pub whiten: bool,
    pub threads: Option<usize>,
    pub problem: ProblemConfig,
    pub selection: Option<SelectionConfig>,
    pub slice: Option<SliceConfig>,
    #[serde(rename = "STD", default)]
    pub std: KaczmarzSection,
    #[serde(rename = "SNR")]
    pub snr: Option<SnrSection>,
    #[serde(rename = "rSVD1")]
    pub rsvd1: Option<Rsvd1Section>,
    #[serde(rename = "rSVD2")]
    pub rsvd2: Option<Rsvd2Section>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemSource {
    Synth,
    Files,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumKind {
    Algebraic,
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Random,
    Cone,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub source: ProblemSource,
    // synthetic problems
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    #[serde(default = "default_spectrum")]
    pub spectrum: SpectrumKind,
    /// Algebraic rate or exponential ratio of the singular values.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Expected `‖η‖ / ‖A x†‖`.
    #[serde(default = "default_noise_level")]
    pub noise_level: f64,
    /// Largest over smallest noise variance.
    #[serde(default = "default_ratio")]
    pub variance_ratio: f64,
    #[serde(default = "default_empty_scans")]
    pub empty_scans: usize,
    #[serde(default = "default_phantom")]
    pub phantom: PhantomKind,
    /// Voxel grid for cone phantoms and slice images.
    pub grid: Option<[usize; 3]>,
    pub spacing: Option<[f64; 3]>,
    pub cone_axis: Option<Axis>,
    // problems read from disk
    pub a: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Directory of `empty_XXXXX.vec` background coefficient vectors.
    pub empty_dir: Option<PathBuf>,
    /// Per-row quality used by the SNR method.
    pub quality: Option<PathBuf>,
    /// Noise norm of `y`, for the discrepancy rule.
    pub delta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Discrepancy,
    QuasiOptimality,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub rule: RuleKind,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub eps: f64,
    /// Take the minimum-residual α when no residual meets the bound.
    #[serde(default)]
    pub fallback: bool,
    /// Start each grid solve from the previous solution.
    #[serde(default)]
    pub warm_start: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    pub axis: Axis,
    pub index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KaczmarzSection {
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "yes")]
    pub nonneg: bool,
    pub rel_tol: Option<f64>,
}

impl Default for KaczmarzSection {
    fn default() -> Self {
        Self {
            sweeps: default_sweeps(),
            omega: default_omega(),
            nonneg: true,
            rel_tol: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrSection {
    /// Number of rows kept, largest quality first.
    pub rows: OneOrMany,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default = "default_omega")]
    pub omega: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rsvd1Section {
    pub k: OneOrMany,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default)]
    pub q_power: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default = "default_omega")]
    pub omega: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rsvd2Section {
    pub k: OneOrMany,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default)]
    pub q_power: usize,
    #[serde(default)]
    pub seed: u64,
    /// Filter `s/(s² + α)` instead of `s/(s² + α²)`.
    #[serde(default)]
    pub classic_filter: bool,
}

fn yes() -> bool {
    true
}
fn default_repeats() -> usize {
    1
}
fn default_spectrum() -> SpectrumKind {
    SpectrumKind::Algebraic
}
fn default_decay() -> f64 {
    1.0
}
fn default_noise_level() -> f64 {
    1e-2
}
fn default_ratio() -> f64 {
    1.0
}
fn default_empty_scans() -> usize {
    100
}
fn default_phantom() -> PhantomKind {
    PhantomKind::Random
}
fn default_alpha0() -> f64 {
    100.0
}
fn default_q() -> f64 {
    0.5
}
fn default_count() -> usize {
    20
}
fn default_tau() -> f64 {
    1.1
}
fn default_sweeps() -> usize {
    mpirecon_core::kaczmarz::DEFAULT_SWEEPS
}
fn default_omega() -> f64 {
    1.0
}
fn default_p() -> usize {
    mpirecon_core::rsvd::DEFAULT_OVERSAMPLING
}

/// One `(method, k)` run; `k` is the row count for SNR and the rank for rSVD.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MethodRun {
    pub method: MethodName,
    pub k: Option<usize>,
}

impl MethodRun {
    pub fn label(&self) -> String {
        match self.k {
            Some(k) => format!("{}_k{k}", self.method),
            None => self.method.to_string(),
        }
    }
}

impl PipelineConfig {
    /// Parses and checks a config; `path` only labels error messages.
    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            CliError::Config {
                path: path.to_path_buf(),
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })?;
        cfg.check(text, path)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<(Self, String)> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::parse(&text, path)?;
        Ok((cfg, text))
    }

    fn check(&self, text: &str, path: &Path) -> CliResult<()> {
        let at_methods = |message: String| {
            let (line, column) = line_col(text, self.methods.span().start);
            CliError::Config {
                path: path.to_path_buf(),
                line,
                column,
                message,
            }
        };
        let methods = self.methods.get_ref();
        if methods.is_empty() {
            return Err(at_methods("methods list is empty".into()));
        }
        for (i, m) in methods.iter().enumerate() {
            if methods[..i].contains(m) {
                return Err(at_methods(format!("method {m} listed twice")));
            }
            let missing = match m {
                MethodName::Std => false,
                MethodName::Snr => self.snr.is_none(),
                MethodName::Rsvd1 => self.rsvd1.is_none(),
                MethodName::Rsvd2 => self.rsvd2.is_none(),
            };
            if missing {
                return Err(at_methods(format!("method {m} needs a [{m}] section")));
            }
        }
        if self.repeats == 0 {
            return Err(CliError::usage("repeats must be at least 1"));
        }
        match (&self.alpha, &self.selection) {
            (None, None) => return Err(CliError::usage("give either alpha or a [selection] section")),
            (Some(a), _) if !(*a >= 0.0) || !a.is_finite() => {
                return Err(CliError::usage(format!("alpha must be nonnegative, got {a}")))
            }
            _ => {}
        }
        for run in self.runs() {
            if run.k == Some(0) {
                return Err(at_methods(format!("{} needs k >= 1", run.method)));
            }
        }
        let p = &self.problem;
        match p.source {
            ProblemSource::Synth => {
                let grid_cols = p.grid.map(|g| g.iter().product::<usize>());
                if p.rows.is_none() {
                    return Err(CliError::usage("synthetic problem needs rows"));
                }
                if p.cols.is_none() && grid_cols.is_none() {
                    return Err(CliError::usage("synthetic problem needs cols or grid"));
                }
                if let (Some(c), Some(g)) = (p.cols, grid_cols) {
                    if c != g {
                        return Err(CliError::usage(format!("cols = {c} but the grid has {g} voxels")));
                    }
                }
                if p.phantom == PhantomKind::Cone && p.grid.is_none() {
                    return Err(CliError::usage("cone phantom needs a grid"));
                }
            }
            ProblemSource::Files => {
                if p.a.is_none() || p.y.is_none() {
                    return Err(CliError::usage("file problem needs a and y"));
                }
            }
        }
        Ok(())
    }

    /// `(method, k)` pairs in config order.
    pub fn runs(&self) -> Vec<MethodRun> {
        let mut out = Vec::new();
        for &method in self.methods.get_ref() {
            let ks = match method {
                MethodName::Std => vec![],
                MethodName::Snr => self.snr.as_ref().map(|s| s.rows.values()).unwrap_or_default(),
                MethodName::Rsvd1 => self.rsvd1.as_ref().map(|s| s.k.values()).unwrap_or_default(),
                MethodName::Rsvd2 => self.rsvd2.as_ref().map(|s| s.k.values()).unwrap_or_default(),
            };
            if method == MethodName::Std {
                out.push(MethodRun { method, k: None });
            }
            out.extend(ks.into_iter().map(|k| MethodRun { method, k: Some(k) }));
        }
        out
    }

    pub fn problem_cols(&self) -> Option<usize> {
        self.problem
            .cols
            .or_else(|| self.problem.grid.map(|g| g.iter().product()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "methods = [\"STD\", \"rSVD2\"]\nalpha = 0.01\n\n[problem]\nsource = \"synth\"\nrows = 20\ncols = 10\n\n[rSVD2]\nk = [4, 8]\n";

    fn parse(text: &str) -> CliResult<PipelineConfig> {
        PipelineConfig::parse(text, Path::new("test.toml"))
    }

    #[test]
    fn runs_expand_k_lists() {
        let cfg = parse(BASE).unwrap();
        let labels: Vec<String> = cfg.runs().iter().map(MethodRun::label).collect();
        assert_eq!(labels, ["STD", "rSVD2_k4", "rSVD2_k8"]);
        assert_eq!(cfg.repeats, 1);
        assert_eq!(cfg.std.sweeps, 20);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let text = BASE.replace("cols = 10", "cols = 10\ncolumns = 3");
        match parse(&text) {
            Err(CliError::Config { line, message, .. }) => {
                assert_eq!(line, 8, "{message}");
                assert!(message.contains("columns"), "{message}");
            }
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_methods_is_a_user_error() {
        let text = BASE.replace("methods = [\"STD\", \"rSVD2\"]", "methods = []");
        let err = parse(&text).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(matches!(err, CliError::Config { line: 1, .. }), "{err}");
    }

    #[test]
    fn missing_section_and_alpha() {
        let text = BASE.replace("[rSVD2]\nk = [4, 8]\n", "");
        assert!(parse(&text).is_err());
        let text = BASE.replace("alpha = 0.01\n", "");
        assert!(matches!(parse(&text), Err(CliError::Usage(_))));
    }
}
