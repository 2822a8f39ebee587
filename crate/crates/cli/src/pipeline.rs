//! The method chain behind `mpirecon run`: STD, SNR, rSVD1 and rSVD2 on one
//! problem, each with a fixed or rule-selected α, timed over repeats.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{info, warn};
use mpirecon_core::calib::normalize_operator;
use mpirecon_core::direct::{filtered_inverse_projected, FilterKind};
use mpirecon_core::io_formats::{export_slice_image, write_text};
use mpirecon_core::kaczmarz::residual_norm;
use mpirecon_core::linalg::dist;
use mpirecon_core::param::{
    alpha_grid, consecutive_distances, diagnostics_csv, discrepancy_select, dp_bound, quasi_opt_select,
    DiscrepancyOutcome,
};
use mpirecon_core::rsvd::{project_data, reduced_operator, rsvd};
use mpirecon_core::synth::write_problem;
use mpirecon_core::{
    kaczmarz_solve, Axis, KaczmarzConfig, LowRankFactors, Matrix, ReconstructionResult, SystemMatrix, VoxelGrid,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::compare::{compare_methods, relative_error};
use crate::config::{KaczmarzSection, MethodName, MethodRun, PipelineConfig, RuleKind, SelectionConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{create_output_dir, fill_manifests, Manifest};
use crate::problem::{load_problem, Problem};
use crate::timing::{timing_csv, TimingRow};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Overrides the config's `include_preprocessing` when set.
    pub include_preprocessing: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub run: MethodRun,
    pub result: ReconstructionResult,
    /// `‖A x − y‖` on the method's own (normalized) full-size system.
    pub residual: f64,
    pub selected_index: Option<usize>,
    pub fallback: bool,
}

#[derive(Clone, Debug)]
pub struct PipelineReport {
    pub out: PathBuf,
    pub outcomes: Vec<MethodOutcome>,
    pub timings: Vec<TimingRow>,
}

/// The data-space system a method's residual and noise level refer to.
#[derive(Clone, Debug)]
struct Reference {
    a: Matrix,
    y: Vec<f64>,
    delta: Option<f64>,
}

enum Solver {
    Iterative {
        op: Matrix,
        data: Vec<f64>,
        section: KaczmarzSection,
    },
    Direct {
        f: LowRankFactors,
        w: Vec<f64>,
        kind: FilterKind,
    },
}

struct Prepared {
    solver: Solver,
    reference: Reference,
}

impl Prepared {
    fn solve(&self, alpha: f64, x0: Option<Vec<f64>>) -> CliResult<ReconstructionResult> {
        match &self.solver {
            Solver::Iterative { op, data, section } => {
                let mut cfg = KaczmarzConfig::new(alpha).sweeps(section.sweeps).omega(section.omega);
                cfg.enforce_nonneg = section.nonneg;
                cfg.rel_change_tol = section.rel_tol;
                cfg.x0 = x0;
                Ok(kaczmarz_solve(op, data, &cfg)?)
            }
            Solver::Direct { f, w, kind } => Ok(filtered_inverse_projected(f, w, alpha, *kind)?),
        }
    }

    fn reference_residual(&self, x: &[f64]) -> CliResult<f64> {
        Ok(residual_norm(&self.reference.a, x, &self.reference.y)?)
    }
}

fn normalized(a: &Matrix, y: &[f64], y_true: Option<&[f64]>, delta: Option<f64>, on: bool) -> CliResult<Reference> {
    if !on {
        let delta = y_true.map(|t| dist(y, t)).or(delta);
        return Ok(Reference {
            a: a.clone(),
            y: y.to_vec(),
            delta,
        });
    }
    let n = normalize_operator(&SystemMatrix::raw(a.clone()), y)?;
    let delta = match y_true {
        Some(t) => Some(dist(&n.data, &t.iter().map(|v| v / n.scale).collect::<Vec<_>>())),
        None => delta.map(|d| d / n.scale),
    };
    Ok(Reference {
        a: n.matrix.matrix,
        y: n.data,
        delta,
    })
}

/// Indices of the `k` largest qualities, ties to the smaller row, in row order.
pub fn top_rows(quality: &[f64], k: usize) -> CliResult<Vec<usize>> {
    if k == 0 || k > quality.len() {
        return Err(CliError::usage(format!(
            "SNR row count {k} outside 1..={}",
            quality.len()
        )));
    }
    let mut order: Vec<usize> = (0..quality.len()).collect();
    order.sort_by(|&a, &b| quality[b].total_cmp(&quality[a]));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

type FactorCache = HashMap<(usize, usize, usize, u64), LowRankFactors>;

fn prepare(
    cfg: &PipelineConfig,
    problem: &Problem,
    run: MethodRun,
    cache: Option<&mut FactorCache>,
) -> CliResult<Prepared> {
    let full = |p: &Problem| normalized(&p.a, &p.y, p.y_true.as_deref(), p.delta, cfg.normalize);
    let mut cache = cache;
    let mut factors = |reference: &Reference, k: usize, p: usize, q: usize, seed: u64| -> CliResult<LowRankFactors> {
        let key = (k, p, q, seed);
        if let Some(f) = cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(f.clone());
        }
        let f = rsvd(&reference.a, k, p, q, seed)?;
        if let Some(c) = cache.as_mut() {
            c.insert(key, f.clone());
        }
        Ok(f)
    };
    let k = run.k.unwrap_or(0);
    let prepared = match run.method {
        MethodName::Std => {
            let reference = full(problem)?;
            Prepared {
                solver: Solver::Iterative {
                    op: reference.a.clone(),
                    data: reference.y.clone(),
                    section: cfg.std.clone(),
                },
                reference,
            }
        }
        MethodName::Snr => {
            let sec = cfg.snr.as_ref().expect("checked by the config");
            let rows = top_rows(&problem.quality, k)?;
            let mut mask = vec![false; problem.a.rows()];
            rows.iter().for_each(|&r| mask[r] = true);
            let a = problem.a.select_rows(&mask)?;
            let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<f64>>();
            let y = pick(&problem.y);
            let y_true = problem.y_true.as_deref().map(pick);
            let reference = normalized(&a, &y, y_true.as_deref(), None, cfg.normalize)?;
            Prepared {
                solver: Solver::Iterative {
                    op: reference.a.clone(),
                    data: reference.y.clone(),
                    section: KaczmarzSection {
                        sweeps: sec.sweeps,
                        omega: sec.omega,
                        ..cfg.std.clone()
                    },
                },
                reference,
            }
        }
        MethodName::Rsvd1 => {
            let sec = cfg.rsvd1.as_ref().expect("checked by the config");
            let reference = full(problem)?;
            let f = factors(&reference, k, sec.p, sec.q_power, sec.seed)?;
            Prepared {
                solver: Solver::Iterative {
                    op: reduced_operator(&f),
                    data: project_data(&f, &reference.y),
                    section: KaczmarzSection {
                        sweeps: sec.sweeps,
                        omega: sec.omega,
                        ..cfg.std.clone()
                    },
                },
                reference,
            }
        }
        MethodName::Rsvd2 => {
            let sec = cfg.rsvd2.as_ref().expect("checked by the config");
            let reference = full(problem)?;
            let f = factors(&reference, k, sec.p, sec.q_power, sec.seed)?;
            let w = project_data(&f, &reference.y);
            let kind = if sec.classic_filter {
                FilterKind::Classic
            } else {
                FilterKind::Squared
            };
            Prepared {
                solver: Solver::Direct { f, w, kind },
                reference,
            }
        }
    };
    Ok(prepared)
}

#[derive(Serialize)]
struct SelectionRecord {
    rule: RuleKind,
    index: usize,
    alpha: f64,
    fallback: bool,
    bound: Option<f64>,
}

struct Selected {
    result: ReconstructionResult,
    index: usize,
    fallback: bool,
}

fn select_alpha(sel: &SelectionConfig, prepared: &Prepared, truth: Option<&[f64]>, dir: &Path) -> CliResult<Selected> {
    let grid = alpha_grid(sel.alpha0, sel.q, sel.count)?;
    let results: Vec<ReconstructionResult> = if sel.warm_start {
        let mut out: Vec<ReconstructionResult> = Vec::with_capacity(grid.len());
        for &alpha in &grid.values {
            let x0 = out.last().map(|r| r.x.clone());
            out.push(prepared.solve(alpha, x0)?);
        }
        out
    } else {
        grid.values
            .par_iter()
            .map(|&alpha| prepared.solve(alpha, None))
            .collect::<CliResult<_>>()?
    };
    let residuals: Vec<f64> = results
        .iter()
        .map(|r| prepared.reference_residual(&r.x))
        .collect::<CliResult<_>>()?;
    let solutions: Vec<Vec<f64>> = results.iter().map(|r| r.x.clone()).collect();
    let distances = consecutive_distances(&solutions)?;
    let errors: Option<Vec<f64>> = truth.map(|t| solutions.iter().map(|x| relative_error(x, t)).collect());
    write_text(
        dir.join("diagnostics.csv"),
        &diagnostics_csv(&grid, Some(&residuals), Some(&distances), errors.as_deref()),
    )?;
    let (index, fallback, bound) = match sel.rule {
        RuleKind::Discrepancy => {
            let delta = prepared.reference.delta.ok_or_else(|| {
                CliError::usage("the discrepancy rule needs a noise level: set problem.delta or use synthetic data")
            })?;
            let bound = dp_bound(sel.tau, delta, sel.sigma, sel.eps);
            match discrepancy_select(&residuals, bound)? {
                DiscrepancyOutcome::Selected(r) => (r.index, false, Some(bound)),
                none if sel.fallback => {
                    let r = none.or_min_residual();
                    warn!("no residual below {bound:.3e}; falling back to the minimum residual");
                    (r.index, true, Some(bound))
                }
                DiscrepancyOutcome::NoAdmissible { .. } => {
                    return Err(CliError::usage(format!(
                        "no α on the grid reaches the discrepancy bound {bound:.3e}; \
                         set selection.fallback = true to accept the minimum residual"
                    )))
                }
            }
        }
        RuleKind::QuasiOptimality => (quasi_opt_select(&solutions)?.index, false, None),
    };
    let record = SelectionRecord {
        rule: sel.rule,
        index,
        alpha: grid.get(index),
        fallback,
        bound,
    };
    let text = toml::to_string(&record).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(dir.join("selection.toml"), &text)?;
    let result = results.into_iter().nth(index).expect("index comes from the grid");
    Ok(Selected {
        result,
        index,
        fallback,
    })
}

#[derive(Serialize)]
struct RunRecord {
    method: String,
    k: Option<usize>,
    alpha: f64,
    residual: f64,
    rel_error: Option<f64>,
}

/// Mid slices along every axis, or the configured one.
fn write_slices(x: &[f64], grid: &VoxelGrid, slice: Option<(Axis, Option<usize>)>, dir: &Path) -> CliResult<()> {
    let wanted: Vec<(Axis, usize)> = match slice {
        Some((axis, index)) => vec![(axis, index.unwrap_or(grid.dims[axis.index()] / 2))],
        None => [Axis::X, Axis::Y, Axis::Z]
            .into_iter()
            .map(|a| (a, grid.dims[a.index()] / 2))
            .collect(),
    };
    for (axis, index) in wanted {
        let name = format!("slice_{}_{index:03}.pgm", format!("{axis:?}").to_lowercase());
        export_slice_image(x, grid, axis, index, dir.join(name))?;
    }
    Ok(())
}

fn thread_pool(threads: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::usage("thread count must be positive"));
        }
        b = b.num_threads(t);
    }
    b.build().map_err(|e| CliError::Internal(format!("thread pool: {e}")))
}

/// Runs a parsed config; `base` resolves relative paths in it.
pub fn run_pipeline(cfg: &PipelineConfig, base: &Path, opts: &RunOptions) -> CliResult<PipelineReport> {
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(|o| crate::problem::resolve(base, o)))
        .ok_or_else(|| CliError::usage("no output directory: pass --out or set output in the config"))?;
    let pool = thread_pool(opts.threads.or(cfg.threads))?;
    pool.install(|| run_in(cfg, base, opts, &out))
}

fn run_in(cfg: &PipelineConfig, base: &Path, opts: &RunOptions, out: &Path) -> CliResult<PipelineReport> {
    let mut manifest = Manifest::new("run", cfg)?.seed("problem", cfg.problem.seed);
    if let Some(s) = &cfg.rsvd1 {
        manifest = manifest.seed("rSVD1", s.seed);
    }
    if let Some(s) = &cfg.rsvd2 {
        manifest = manifest.seed("rSVD2", s.seed);
    }
    create_output_dir(out, &manifest)?;
    let result = run_methods(cfg, base, opts, out, &manifest);
    // Whatever was written so far stays, with its manifest.
    fill_manifests(out, &manifest)?;
    result
}

fn run_methods(
    cfg: &PipelineConfig,
    base: &Path,
    opts: &RunOptions,
    out: &Path,
    manifest: &Manifest,
) -> CliResult<PipelineReport> {
    let include_pre = opts.include_preprocessing.unwrap_or(cfg.include_preprocessing);
    let (problem, synth) = load_problem(&cfg.problem, base, cfg.whiten)?;
    if let Some(sp) = &synth {
        write_problem(sp, out.join("problem"))?;
    }
    let slice = cfg.slice.as_ref().map(|s| (s.axis, s.index));
    let mut cache = FactorCache::new();
    let mut outcomes = Vec::new();
    let mut timings = Vec::new();
    for run in cfg.runs() {
        let label = run.label();
        let dir = out.join(&label);
        create_output_dir(&dir, manifest)?;
        info!("{label}: preparing");
        let prepared = prepare(cfg, &problem, run, Some(&mut cache))?;
        let (result, selected_index, fallback) = match (&cfg.selection, cfg.alpha) {
            (Some(sel), _) => {
                let s = select_alpha(sel, &prepared, problem.truth.as_deref(), &dir)?;
                (s.result, Some(s.index), s.fallback)
            }
            (None, Some(alpha)) => (prepared.solve(alpha, None)?, None, false),
            (None, None) => unreachable!("checked by the config"),
        };
        let alpha = result.alpha;
        let mut samples = Vec::with_capacity(cfg.repeats);
        for _ in 0..cfg.repeats {
            samples.push(time_once(cfg, &problem, run, &prepared, alpha, include_pre)?);
        }
        let row = TimingRow::from_samples(run.method.to_string(), run.k, &samples);
        info!("{label}: α = {alpha:.3e}, {:.3e} ± {:.1e} s", row.mean, row.std);
        timings.push(row);
        let residual = prepared.reference_residual(&result.x)?;
        result.write_dir(&dir)?;
        let record = RunRecord {
            method: run.method.to_string(),
            k: run.k,
            alpha,
            residual,
            rel_error: problem.truth.as_deref().map(|t| relative_error(&result.x, t)),
        };
        let text = toml::to_string(&record).map_err(|e| CliError::Internal(e.to_string()))?;
        write_text(dir.join("run.toml"), &text)?;
        if let Some(g) = &problem.grid {
            write_slices(&result.x, g, slice, &dir)?;
        }
        outcomes.push(MethodOutcome {
            run,
            result,
            residual,
            selected_index,
            fallback,
        });
    }
    write_text(out.join("timing.csv"), &timing_csv(&timings))?;
    let named: Vec<(String, ReconstructionResult)> = outcomes
        .iter()
        .map(|o| {
            let mut r = o.result.clone();
            r.residual_norm = o.residual;
            (o.run.label(), r)
        })
        .collect();
    let report = compare_methods(&named, problem.truth.as_deref())?;
    write_text(out.join("compare.csv"), &report.summary_csv())?;
    write_text(out.join("distances.csv"), &report.distances_csv())?;
    if let Some(t) = &problem.truth {
        write_text(out.join("truth.csv"), &mpirecon_core::io_formats::vector_to_csv(t))?;
    }
    Ok(PipelineReport {
        out: out.to_path_buf(),
        outcomes,
        timings,
    })
}

fn time_once(
    cfg: &PipelineConfig,
    problem: &Problem,
    run: MethodRun,
    prepared: &Prepared,
    alpha: f64,
    include_pre: bool,
) -> CliResult<Duration> {
    let start = Instant::now();
    if include_pre {
        let fresh = prepare(cfg, problem, run, None)?;
        fresh.solve(alpha, None)?;
    } else {
        prepared.solve(alpha, None)?;
    }
    Ok(start.elapsed())
}

/// Loads a config file and runs it; paths in the file are relative to it.
pub fn run_config_file(path: &Path, opts: &RunOptions) -> CliResult<PipelineReport> {
    let (cfg, _) = PipelineConfig::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = if base.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        base
    };
    run_pipeline(&cfg, &base, opts)
}
