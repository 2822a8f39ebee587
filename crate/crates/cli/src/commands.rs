//! Subcommands of the `mpirecon` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use mpirecon_core::bound::{report_csv, verify_bound, BoundSweep, BoundVerdict};
use mpirecon_core::calib::{
    assemble_system_matrix, background_correct, band_pass_indices, measurement_background, project_acquisition,
    read_calibration_dir, rows_for_target, select_rows, snr_measure, FrequencyIndexSet,
};
use mpirecon_core::direct::{filtered_inverse, FilterKind};
use mpirecon_core::io_formats::{read_matrix, read_vector, vector_from_csv, write_matrix, write_text, write_vector};
use mpirecon_core::kaczmarz::residual_norm;
use mpirecon_core::noise::{
    apply_whitening, estimate_covariance, read_covariance, whitening_from, write_covariance, CovarianceKind,
};
use mpirecon_core::param::{
    alpha_grid, consecutive_distances, diagnostics_csv, discrepancy_select, dp_bound, quasi_opt_select,
};
use mpirecon_core::rsvd::{read_factors, reduce_problem, rsvd, write_factors};
use mpirecon_core::synth::write_problem;
use mpirecon_core::{kaczmarz_solve, Axis, KaczmarzConfig, ReconstructionResult, SystemMatrix};
use rayon::prelude::*;
use serde::Serialize;

use crate::compare::{compare_methods, relative_error};
use crate::config::{
    KaczmarzSection, MethodName, OneOrMany, PhantomKind, PipelineConfig, ProblemConfig, ProblemSource, Rsvd1Section,
    Rsvd2Section, SnrSection, SpectrumKind,
};
use crate::error::{CliError, CliResult};
use crate::manifest::{create_output_dir, Manifest};
use crate::pipeline::{run_config_file, run_pipeline, PipelineReport, RunOptions};
use crate::problem::{build_synthetic, grid_from, read_empty_dir, spectrum, SynthSpec};
use crate::timing::timing_csv;

pub const THREADS_ENV: &str = "MPIRECON_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "mpirecon",
    version,
    about = "Regularized reconstruction from calibrated system matrices"
)]
pub struct Cli {
    /// Worker threads for α-grid solves.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic problem.
    Synth(SynthArgs),
    /// Assemble a background-corrected system from a calibration directory.
    Ingest(IngestArgs),
    /// Whiten a system with noise statistics from empty scans.
    Whiten(WhitenArgs),
    /// Randomized truncated SVD of a system matrix.
    Rsvd(RsvdArgs),
    /// One reconstruction at a fixed α.
    Solve(SolveArgs),
    /// Choose α on a geometric grid by discrepancy or quasi-optimality.
    SelectAlpha(SelectArgs),
    /// Check the perturbation error estimate on random small problems.
    BoundCheck(BoundArgs),
    /// Compare reconstructions against each other and a truth.
    Compare(CompareArgs),
    /// Time STD, SNR, rSVD1 and rSVD2 on a synthetic problem.
    Bench(BenchArgs),
    /// Run a pipeline described by a TOML config.
    Run(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumArg {
    Algebraic,
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomArg {
    Random,
    Cone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisArg {
    X,
    Y,
    Z,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::X => Axis::X,
            AxisArg::Y => Axis::Y,
            AxisArg::Z => Axis::Z,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub rows: usize,
    /// Defaults to the number of grid voxels.
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long, value_enum, default_value = "algebraic")]
    pub spectrum: SpectrumArg,
    /// Algebraic rate or exponential ratio.
    #[arg(long, default_value_t = 1.0)]
    pub decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Expected noise norm relative to the exact data.
    #[arg(long, default_value_t = 1e-2)]
    pub noise_level: f64,
    #[arg(long, default_value_t = 1.0)]
    pub variance_ratio: f64,
    #[arg(long, default_value_t = 100)]
    pub empty_scans: usize,
    #[arg(long, value_enum, default_value = "random")]
    pub phantom: PhantomArg,
    /// Voxel counts, e.g. `19,19,19`.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Voxel size in mm, e.g. `2,2,1`.
    #[arg(long, value_delimiter = ',')]
    pub spacing: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "z")]
    pub cone_axis: AxisArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Calibration directory with `manifest.toml` and one file per scan.
    #[arg(long)]
    pub calib: PathBuf,
    /// Phantom measurement, coil signals concatenated.
    #[arg(long)]
    pub measurement: Option<PathBuf>,
    /// Empty measurement taken with the phantom; defaults to the calibration background.
    #[arg(long)]
    pub measurement_empty: Option<PathBuf>,
    /// Lower and upper band edge in Hz.
    #[arg(long, value_delimiter = ',', required = true)]
    pub band: Vec<f64>,
    /// Largest frequency index considered; defaults to the Nyquist limit.
    #[arg(long)]
    pub j_max: Option<u64>,
    /// Keep band indices whose SNR-type quality reaches this value.
    #[arg(long, conflicts_with = "rows")]
    pub threshold: Option<f64>,
    /// Keep exactly this many rows, best quality first.
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceArg {
    Diagonal,
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct WhitenArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    /// Directory of `empty_XXXXX.vec` files to estimate the noise from.
    #[arg(long, required_unless_present = "noise")]
    pub empty: Option<PathBuf>,
    /// Stored covariance model instead of empty scans.
    #[arg(long, conflicts_with = "empty")]
    pub noise: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "diagonal")]
    pub kind: CovarianceArg,
    /// Variance floor; defaults to 1e-12 of the largest variance.
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RsvdArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = mpirecon_core::rsvd::DEFAULT_OVERSAMPLING)]
    pub p: usize,
    #[arg(long, default_value_t = mpirecon_core::rsvd::DEFAULT_POWER)]
    pub q_power: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverArg {
    Kaczmarz,
    Filtered,
}

#[derive(Debug, Args, Serialize)]
pub struct SolverOpts {
    #[arg(long)]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long, value_enum, default_value = "kaczmarz")]
    pub method: SolverArg,
    /// rSVD factors directory; Kaczmarz then runs on the reduced system.
    #[arg(long)]
    pub factors: Option<PathBuf>,
    #[arg(long, default_value_t = mpirecon_core::kaczmarz::DEFAULT_SWEEPS)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    /// Drop the constraint x ≥ 0 in Kaczmarz.
    #[arg(long)]
    pub unconstrained: bool,
    /// Stop once the relative change of x per sweep falls below this.
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Filter s/(s² + α) instead of s/(s² + α²).
    #[arg(long)]
    pub classic_filter: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub solver: SolverOpts,
    #[arg(long)]
    pub alpha: f64,
    /// Initial iterate as CSV.
    #[arg(long)]
    pub x0: Option<PathBuf>,
    /// Record the objective after each sweep.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    Discrepancy,
    QuasiOptimality,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub solver: SolverOpts,
    #[arg(long, value_enum)]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 100.0)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 0.5)]
    pub q: f64,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 1.1)]
    pub tau: f64,
    /// Noise norm of y; required by the discrepancy rule.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Operator error bound.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Accept the minimum-residual α when no residual meets the bound.
    #[arg(long)]
    pub fallback: bool,
    /// Start each grid solve from the previous one.
    #[arg(long)]
    pub warm_start: bool,
    /// Exact solution as VEC1, for error columns.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BoundArgs {
    #[arg(long, default_value_t = 10)]
    pub rows: usize,
    #[arg(long, default_value_t = 6)]
    pub cols: usize,
    /// Independent sweeps, seeds 0..seeds.
    #[arg(long, default_value_t = 8)]
    pub seeds: u64,
    /// Minimize over x ≥ 0.
    #[arg(long)]
    pub constrained: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// `NAME=DIR` of a result directory; repeat for each method.
    #[arg(long = "result", required = true)]
    pub results: Vec<String>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 2000)]
    pub rows: usize,
    #[arg(long, default_value_t = 400)]
    pub cols: usize,
    /// Ranks and SNR row counts, e.g. `20,50`.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub alpha: f64,
    #[arg(long, default_value_t = mpirecon_core::kaczmarz::DEFAULT_SWEEPS)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add SNR row selection to the methods.
    #[arg(long)]
    pub snr: bool,
    #[arg(long)]
    pub include_preprocessing: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Overrides `output` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Count preprocessing in the timings.
    #[arg(long)]
    pub include_preprocessing: bool,
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Whiten(a) => whiten(a),
        Command::Rsvd(a) => rsvd_cmd(a),
        Command::Solve(a) => solve(a),
        Command::SelectAlpha(a) => in_pool(cli.threads, || select(a)),
        Command::BoundCheck(a) => in_pool(cli.threads, || bound_check(a)),
        Command::Compare(a) => compare(a),
        Command::Bench(a) => bench(a, cli.threads).map(|_| ()),
        Command::Run(a) => {
            let opts = RunOptions {
                out: a.out.clone(),
                threads: cli.threads,
                include_preprocessing: a.include_preprocessing.then_some(true),
            };
            let report = run_config_file(&a.config, &opts)?;
            print!("{}", timing_csv(&report.timings));
            Ok(())
        }
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::usage("thread count must be positive"));
        }
        b = b.num_threads(t);
    }
    let pool = b.build().map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn three<T: Copy>(v: &Option<Vec<T>>, flag: &str) -> CliResult<Option<[T; 3]>> {
    match v.as_deref() {
        None => Ok(None),
        Some(&[a, b, c]) => Ok(Some([a, b, c])),
        Some(v) => Err(CliError::usage(format!("--{flag} takes three values, got {}", v.len()))),
    }
}

fn synth(args: &SynthArgs) -> CliResult<()> {
    let grid = grid_from(three(&args.grid, "grid")?, three(&args.spacing, "spacing")?)?;
    let cols = match (args.cols, grid) {
        (Some(c), Some(g)) if c != g.len() => {
            return Err(CliError::usage(format!(
                "--cols {c} but the grid has {} voxels",
                g.len()
            )))
        }
        (Some(c), _) => c,
        (None, Some(g)) => g.len(),
        (None, None) => return Err(CliError::usage("give --cols or --grid")),
    };
    let spec = SynthSpec {
        rows: args.rows,
        cols,
        spectrum: spectrum(
            match args.spectrum {
                SpectrumArg::Algebraic => SpectrumKind::Algebraic,
                SpectrumArg::Exponential => SpectrumKind::Exponential,
            },
            args.decay,
        ),
        seed: args.seed,
        noise_level: args.noise_level,
        variance_ratio: args.variance_ratio,
        empty_scans: args.empty_scans,
        phantom: match args.phantom {
            PhantomArg::Random => PhantomKind::Random,
            PhantomArg::Cone => PhantomKind::Cone,
        },
        grid,
        cone_axis: args.cone_axis.into(),
    };
    let p = build_synthetic(&spec)?;
    let manifest = Manifest::new("synth", args)?.seed("problem", args.seed);
    create_output_dir(&args.out, &manifest)?;
    write_problem(&p, &args.out)?;
    manifest.write(&args.out.join("noise"))?;
    println!("{}×{} problem, δ = {:.6e}", args.rows, cols, p.delta);
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    rows: usize,
    cols: usize,
    band_indices: usize,
    threshold: f64,
}

fn ingest(args: &IngestArgs) -> CliResult<()> {
    let cal = read_calibration_dir(&args.calib)?;
    let period = cal.period();
    let j_max = args.j_max.unwrap_or(((cal.samples_per_period() - 1) / 2) as u64);
    let &[b1, b2] = args.band.as_slice() else {
        return Err(CliError::usage(format!(
            "--band takes two values, got {}",
            args.band.len()
        )));
    };
    let band = band_pass_indices(b1, b2, period, j_max)?;
    if band.is_empty() {
        return Err(CliError::usage("no frequency index falls into the band"));
    }
    let (idx, quality) = match (args.threshold, args.rows) {
        (None, None) => (FrequencyIndexSet::uniform(cal.coils(), band.clone()), None),
        (t, r) => {
            let d = snr_measure(&cal, &band)?;
            let sel = match (t, r) {
                (Some(t), _) => select_rows(&d, &band, t)?,
                (None, Some(r)) => rows_for_target(&d, &band, r)?,
                (None, None) => unreachable!(),
            };
            let q: Vec<f64> = sel
                .indices
                .per_coil
                .iter()
                .enumerate()
                .flat_map(|(l, js)| {
                    let d = &d;
                    js.iter().flat_map(move |&j| {
                        let v = d.get(l, j).unwrap_or(f64::NAN);
                        [v, v]
                    })
                })
                .collect();
            (sel.indices, Some(q))
        }
    };
    if idx.n_rows() == 0 {
        return Err(CliError::usage("the selection keeps no rows"));
    }
    let assembled = assemble_system_matrix(&cal, &idx)?;
    let manifest = Manifest::new("ingest", args)?;
    create_output_dir(&args.out, &manifest)?;
    let project = |v: &[f64]| -> CliResult<Vec<f64>> {
        let ns = cal.samples_per_period();
        if v.len() != ns * cal.coils() {
            return Err(CliError::usage(format!(
                "measurement holds {} samples, expected {} coils × {ns}",
                v.len(),
                cal.coils()
            )));
        }
        let coils: Vec<&[f64]> = v.chunks_exact(ns).collect();
        Ok(project_acquisition(&coils, period, &idx)?)
    };
    let a = match &args.measurement {
        Some(path) => {
            let v = project(&read_vector(path)?)?;
            let v0 = match &args.measurement_empty {
                Some(p) => project(&read_vector(p)?)?,
                None => measurement_background(&cal, &idx)?,
            };
            let (a, y) = background_correct(&assembled.matrix, &assembled.background, &v, &v0)?;
            write_vector(args.out.join("y.vec"), &y)?;
            a
        }
        None => {
            let zero = vec![0.0; idx.n_rows()];
            background_correct(&assembled.matrix, &assembled.background, &zero, &zero)?.0
        }
    };
    write_matrix(args.out.join("a.smx"), &a.matrix)?;
    write_vector(args.out.join("background.vec"), &assembled.background)?;
    for (k, scan) in cal.empty.iter().enumerate() {
        let signals: Vec<f64> = scan.iter().flat_map(|s| s.samples.iter().copied()).collect();
        write_vector(args.out.join(format!("empty_{k:05}.vec")), &project(&signals)?)?;
    }
    if let Some(q) = &quality {
        write_vector(args.out.join("quality.vec"), q)?;
    }
    let mut labels = String::from("row,coil,index,part\n");
    for (r, l) in idx.row_labels().iter().enumerate() {
        labels.push_str(&format!("{r},{},{},{:?}\n", l.coil, l.index, l.part));
    }
    write_text(args.out.join("rows.csv"), &labels)?;
    let summary = IngestSummary {
        rows: a.rows(),
        cols: a.cols(),
        band_indices: band.len(),
        threshold: idx.threshold,
    };
    let text = toml::to_string(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(args.out.join("ingest.toml"), &text)?;
    println!("{} rows × {} columns", a.rows(), a.cols());
    Ok(())
}

fn whiten(args: &WhitenArgs) -> CliResult<()> {
    let a = SystemMatrix::raw(read_matrix(&args.a)?);
    let y = read_vector(&args.y)?;
    let kind = match args.kind {
        CovarianceArg::Diagonal => CovarianceKind::Diagonal,
        CovarianceArg::Full => CovarianceKind::Full,
    };
    let model = match (&args.empty, &args.noise) {
        (_, Some(dir)) => read_covariance(dir)?,
        (Some(dir), None) => estimate_covariance(&read_empty_dir(dir)?, kind)?,
        (None, None) => return Err(CliError::usage("give --empty or --noise")),
    };
    let floor = args.floor.unwrap_or_else(|| model.default_floor());
    let w = whitening_from(&model, floor)?;
    let (aw, yw) = apply_whitening(&w, &a, &y, &model.mean)?;
    let manifest = Manifest::new("whiten", args)?;
    create_output_dir(&args.out, &manifest)?;
    write_matrix(args.out.join("a.smx"), &aw.matrix)?;
    write_vector(args.out.join("y.vec"), &yw)?;
    write_covariance(&model, args.out.join("noise"))?;
    manifest.write(&args.out.join("noise"))?;
    println!("whitened {} rows, floor {floor:.3e}", aw.rows());
    Ok(())
}

fn rsvd_cmd(args: &RsvdArgs) -> CliResult<()> {
    let a = read_matrix(&args.a)?;
    let f = rsvd(&a, args.k, args.p, args.q_power, args.seed)?;
    let manifest = Manifest::new("rsvd", args)?.seed("sketch", args.seed);
    create_output_dir(&args.out, &manifest)?;
    write_factors(&f, &args.out)?;
    let total = a.frobenius_norm().powi(2);
    let captured: f64 = f.s.iter().map(|s| s * s).sum();
    println!(
        "rank {} factors, σ_1 = {:.6e}, σ_k = {:.6e}, captured energy {:.4}",
        f.rank(),
        f.s[0],
        f.s[f.rank() - 1],
        if total > 0.0 { captured / total } else { 0.0 }
    );
    Ok(())
}

/// A solver bound to its operator, built from [`SolverOpts`].
struct BoundSolver {
    kind: SolverArg,
    a: Option<mpirecon_core::Matrix>,
    factors: Option<mpirecon_core::LowRankFactors>,
    reduced: Option<mpirecon_core::ReducedProblem>,
    y: Vec<f64>,
    opts: KaczmarzOptsCopy,
    filter: FilterKind,
}

#[derive(Clone, Copy)]
struct KaczmarzOptsCopy {
    sweeps: usize,
    omega: f64,
    nonneg: bool,
    rel_tol: Option<f64>,
}

impl BoundSolver {
    fn new(o: &SolverOpts) -> CliResult<Self> {
        let y = read_vector(&o.y)?;
        let a = o.a.as_ref().map(read_matrix).transpose()?;
        let factors = o.factors.as_ref().map(read_factors).transpose()?;
        match (o.method, &a, &factors) {
            (SolverArg::Kaczmarz, None, None) => return Err(CliError::usage("kaczmarz needs --a or --factors")),
            (SolverArg::Filtered, _, None) => return Err(CliError::usage("the filtered inverse needs --factors")),
            _ => {}
        }
        if let Some(a) = &a {
            if a.rows() != y.len() {
                return Err(CliError::usage(format!(
                    "y has {} entries for {} rows",
                    y.len(),
                    a.rows()
                )));
            }
        }
        let reduced = match (&factors, o.method) {
            (Some(f), SolverArg::Kaczmarz) => Some(reduce_problem(f, &y)?),
            _ => None,
        };
        Ok(Self {
            kind: o.method,
            a,
            factors,
            reduced,
            y,
            opts: KaczmarzOptsCopy {
                sweeps: o.sweeps,
                omega: o.omega,
                nonneg: !o.unconstrained,
                rel_tol: o.rel_tol,
            },
            filter: if o.classic_filter {
                FilterKind::Classic
            } else {
                FilterKind::Squared
            },
        })
    }

    fn solve(&self, alpha: f64, x0: Option<Vec<f64>>, trace: bool) -> CliResult<ReconstructionResult> {
        match self.kind {
            SolverArg::Kaczmarz => {
                let mut cfg = KaczmarzConfig::new(alpha)
                    .sweeps(self.opts.sweeps)
                    .omega(self.opts.omega);
                cfg.enforce_nonneg = self.opts.nonneg;
                cfg.rel_change_tol = self.opts.rel_tol;
                cfg.record_objective = trace;
                cfg.x0 = x0;
                match (&self.reduced, &self.a) {
                    (Some(r), _) => Ok(kaczmarz_solve(&r.b, &r.z, &cfg)?),
                    (None, Some(a)) => Ok(kaczmarz_solve(a, &self.y, &cfg)?),
                    (None, None) => unreachable!("checked in new"),
                }
            }
            SolverArg::Filtered => {
                let f = self.factors.as_ref().expect("checked in new");
                Ok(filtered_inverse(f, &self.y, alpha, self.filter)?)
            }
        }
    }

    /// Residual on the full system when `A` is at hand, else the solver's own.
    fn residual(&self, r: &ReconstructionResult) -> CliResult<f64> {
        match &self.a {
            Some(a) => Ok(residual_norm(a, &r.x, &self.y)?),
            None => Ok(r.residual_norm),
        }
    }
}

fn solve(args: &SolveArgs) -> CliResult<()> {
    let s = BoundSolver::new(&args.solver)?;
    let x0 = args
        .x0
        .as_ref()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| crate::manifest::io_error(p, e))?;
            vector_from_csv(&text).map_err(CliError::from)
        })
        .transpose()?;
    let mut r = s.solve(args.alpha, x0, args.trace)?;
    r.residual_norm = s.residual(&r)?;
    let manifest = Manifest::new("solve", args)?;
    create_output_dir(&args.out, &manifest)?;
    r.write_dir(&args.out)?;
    if !r.objective_trace.is_empty() {
        let mut text = String::from("sweep,objective\n");
        for (i, v) in r.objective_trace.iter().enumerate() {
            text.push_str(&format!("{},{v:.16e}\n", i + 1));
        }
        write_text(args.out.join("objective.csv"), &text)?;
    }
    println!(
        "α = {:.6e}, residual {:.6e}, {} iterations",
        r.alpha, r.residual_norm, r.iterations
    );
    Ok(())
}

#[derive(Serialize)]
struct Selection {
    index: usize,
    alpha: f64,
    fallback: bool,
}

fn select(args: &SelectArgs) -> CliResult<()> {
    let s = BoundSolver::new(&args.solver)?;
    let grid = alpha_grid(args.alpha0, args.q, args.count)?;
    let truth = args.truth.as_ref().map(read_vector).transpose()?;
    let results: Vec<ReconstructionResult> = if args.warm_start {
        let mut out: Vec<ReconstructionResult> = Vec::new();
        for &alpha in &grid.values {
            let x0 = out.last().map(|r| r.x.clone());
            out.push(s.solve(alpha, x0, false)?);
        }
        out
    } else {
        grid.values
            .par_iter()
            .map(|&alpha| s.solve(alpha, None, false))
            .collect::<CliResult<_>>()?
    };
    let residuals: Vec<f64> = results.iter().map(|r| s.residual(r)).collect::<CliResult<_>>()?;
    let solutions: Vec<Vec<f64>> = results.iter().map(|r| r.x.clone()).collect();
    let distances = consecutive_distances(&solutions)?;
    let errors: Option<Vec<f64>> = truth
        .as_ref()
        .map(|t| solutions.iter().map(|x| relative_error(x, t)).collect());
    let manifest = Manifest::new("select-alpha", args)?;
    create_output_dir(&args.out, &manifest)?;
    write_text(
        args.out.join("diagnostics.csv"),
        &diagnostics_csv(&grid, Some(&residuals), Some(&distances), errors.as_deref()),
    )?;
    let outcome = match args.rule {
        RuleArg::Discrepancy => {
            let delta = args
                .delta
                .ok_or_else(|| CliError::usage("the discrepancy rule needs --delta"))?;
            let out = discrepancy_select(&residuals, dp_bound(args.tau, delta, args.sigma, args.eps))?;
            match out.selected() {
                Some(r) => r.clone(),
                None if args.fallback => {
                    warn!("no residual meets the bound; taking the minimum residual");
                    out.or_min_residual()
                }
                None => {
                    return Err(CliError::usage(
                        "no α on the grid meets the discrepancy bound; rerun with --fallback to accept the minimum residual",
                    ))
                }
            }
        }
        RuleArg::QuasiOptimality => quasi_opt_select(&solutions)?,
    };
    let mut chosen = results[outcome.index].clone();
    chosen.residual_norm = residuals[outcome.index];
    chosen.write_dir(args.out.join("selected"))?;
    manifest.write(&args.out.join("selected"))?;
    let rec = Selection {
        index: outcome.index,
        alpha: grid.get(outcome.index),
        fallback: outcome.fallback,
    };
    let text = toml::to_string(&rec).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(args.out.join("selection.toml"), &text)?;
    println!("selected α_{} = {:.6e}", rec.index, rec.alpha);
    Ok(())
}

fn bound_check(args: &BoundArgs) -> CliResult<()> {
    let mut sweep = BoundSweep::standard(args.rows, args.cols);
    sweep.constrained = args.constrained;
    let instances: Vec<_> = (0..args.seeds)
        .map(|seed| sweep.instances(seed))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let verdicts: Vec<BoundVerdict> = instances.par_iter().map(verify_bound).collect::<Result<_, _>>()?;
    let mut reports = Vec::new();
    let mut rejected = 0;
    for v in verdicts {
        match v {
            BoundVerdict::Checked(r) => reports.push(r),
            BoundVerdict::Rejected { .. } => rejected += 1,
        }
    }
    let manifest = Manifest::new("bound-check", args)?;
    create_output_dir(&args.out, &manifest)?;
    write_text(args.out.join("report.csv"), &report_csv(&reports))?;
    let violations = reports.iter().filter(|r| !r.holds).count();
    let worst = reports
        .iter()
        .map(|r| r.rhs / r.lhs.max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    println!(
        "{} checked, {rejected} rejected, {violations} violations, smallest rhs/lhs {worst:.3e}",
        reports.len()
    );
    if violations > 0 {
        warn!("the estimate failed on {violations} instances; see report.csv");
    }
    Ok(())
}

fn compare(args: &CompareArgs) -> CliResult<()> {
    let results = args
        .results
        .iter()
        .map(|spec| {
            let (name, dir) = spec
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--result expects NAME=DIR, got {spec:?}")))?;
            Ok((name.to_string(), ReconstructionResult::read_dir(Path::new(dir))?))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let truth = args.truth.as_ref().map(read_vector).transpose()?;
    let report = compare_methods(&results, truth.as_deref())?;
    let manifest = Manifest::new("compare", args)?;
    create_output_dir(&args.out, &manifest)?;
    write_text(args.out.join("compare.csv"), &report.summary_csv())?;
    write_text(args.out.join("distances.csv"), &report.distances_csv())?;
    print!("{}", report.render());
    Ok(())
}

/// The config `bench` runs: one synthetic problem, all methods at one α.
pub fn bench_config(args: &BenchArgs) -> PipelineConfig {
    let mut methods = vec![MethodName::Std];
    if args.snr {
        methods.push(MethodName::Snr);
    }
    methods.extend([MethodName::Rsvd1, MethodName::Rsvd2]);
    let ks = OneOrMany::Many(args.k.clone());
    PipelineConfig {
        methods: toml::Spanned::new(0..0, methods),
        repeats: args.repeats,
        alpha: Some(args.alpha),
        output: None,
        include_preprocessing: args.include_preprocessing,
        normalize: true,
        whiten: false,
        threads: None,
        problem: ProblemConfig {
            source: ProblemSource::Synth,
            rows: Some(args.rows),
            cols: Some(args.cols),
            spectrum: SpectrumKind::Algebraic,
            decay: 1.0,
            seed: args.seed,
            noise_level: 1e-2,
            variance_ratio: 1.0,
            empty_scans: 20,
            phantom: PhantomKind::Random,
            grid: None,
            spacing: None,
            cone_axis: None,
            a: None,
            y: None,
            truth: None,
            empty_dir: None,
            quality: None,
            delta: None,
        },
        selection: None,
        slice: None,
        std: KaczmarzSection {
            sweeps: args.sweeps,
            ..KaczmarzSection::default()
        },
        snr: Some(SnrSection {
            rows: ks.clone(),
            sweeps: args.sweeps,
            omega: 1.0,
        }),
        rsvd1: Some(Rsvd1Section {
            k: ks.clone(),
            p: mpirecon_core::rsvd::DEFAULT_OVERSAMPLING,
            q_power: 0,
            seed: args.seed,
            sweeps: args.sweeps,
            omega: 1.0,
        }),
        rsvd2: Some(Rsvd2Section {
            k: ks,
            p: mpirecon_core::rsvd::DEFAULT_OVERSAMPLING,
            q_power: 0,
            seed: args.seed,
            classic_filter: false,
        }),
    }
}

fn bench(args: &BenchArgs, threads: Option<usize>) -> CliResult<PipelineReport> {
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(CliError::usage("--k needs positive values"));
    }
    let cfg = bench_config(args);
    let opts = RunOptions {
        out: Some(args.out.clone()),
        threads,
        include_preprocessing: None,
    };
    info!("bench on a {}×{} problem", args.rows, args.cols);
    let report = run_pipeline(&cfg, Path::new("."), &opts)?;
    print!("{}", timing_csv(&report.timings));
    Ok(report)
}
