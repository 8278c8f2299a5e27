use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::baselines::{eg_run, gda_run, BaselineTrace, GDA_DEFAULT_STEP};
use crate::cgm_min::{cgm_min_run, MinSolverConfig, MinTrace, StepSchedule};
use crate::cgm_vi::{cgm_vi_run, extended_constraints, VISolverConfig, VITrace};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, ProblemKind};
use crate::harness::plot::{emit_plots, FigureSpec, PanelSpec};
use crate::harness::table::{to_csv, Cell};
use crate::harness::write_atomic;
use crate::metrics::{certify_min, certify_vi, hbg_gap_closed_form, max_violation, BoundsReport};
use crate::problems::{hbg_instantiate, rap_generate, rap_unconstrained_min, MinProblem, VIProblem};
use crate::reference::{cached_rap_reference, Reference};

/// Environment variable holding the number of worker threads.
pub const WORKERS_ENV: &str = "CGM_WORKERS";

pub const RAP_COLUMNS: &[&str] = &[
    "iter",
    "eta",
    "f_resid",
    "abs_f_resid",
    "max_violation",
    "v_norm",
    "dist_x0",
    "wall_ms",
];

pub const HBG_COLUMNS: &[&str] = &[
    "iter",
    "eta",
    "gap",
    "max_violation",
    "v_norm",
    "dist_x0",
    "rel_err",
    "wall_ms",
];

pub const SUMMARY_COLUMNS: &[&str] = &[
    "run",
    "solver",
    "problem",
    "beta",
    "schedule",
    "T",
    "final_metric",
    "final_violation",
    "final_rel_err",
    "certificates",
    "wall_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Cgm,
    Gda,
    Eg,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Cgm => "cgm",
            Solver::Gda => "gda",
            Solver::Eg => "eg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CellSpec {
    Rap { schedule: StepSchedule, horizon: usize },
    Hbg { beta: f64, solver: Solver, horizon: usize },
}

impl CellSpec {
    fn name(&self) -> String {
        match self {
            CellSpec::Rap { schedule, horizon } => format!("rap_{}_T{horizon}", schedule.name()),
            CellSpec::Hbg { beta, solver, horizon } => format!("hbg_b{beta}_{}_T{horizon}", solver.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub name: String,
    pub solver: Solver,
    pub problem: ProblemKind,
    pub beta: Option<f64>,
    pub schedule: Option<StepSchedule>,
    pub horizon: usize,
    pub csv: PathBuf,
    pub bounds: Option<BoundsReport>,
    /// `f(x^T) - f(x*)` for RAP, strong gap at `x^T` for HBG.
    pub final_metric: f64,
    pub final_violation: f64,
    pub final_rel_err: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub runs: Vec<RunRecord>,
    pub summary_csv: PathBuf,
    pub figures: Vec<PathBuf>,
}

impl ExperimentSummary {
    /// `false` iff some computed certificate failed.
    pub fn certificates_pass(&self) -> bool {
        self.runs
            .iter()
            .filter_map(|r| r.bounds.as_ref())
            .all(BoundsReport::all_pass)
    }
}

/// Worker count from the environment, `None` for the rayon default.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(e) => Err(Error::validation(WORKERS_ENV, format!("`{v}`: {e}"))),
        },
    }
}

struct RapContext {
    problem: MinProblem,
    reference: Reference,
    f_unconstrained: f64,
}

fn cells(config: &ExperimentConfig) -> Vec<CellSpec> {
    let mut out = Vec::new();
    match config.problem {
        ProblemKind::Rap => {
            for &schedule in &config.schedules {
                for &horizon in &config.horizons {
                    out.push(CellSpec::Rap { schedule, horizon });
                }
            }
        }
        ProblemKind::Hbg => {
            let solvers: &[Solver] = if config.run_baselines {
                &[Solver::Cgm, Solver::Gda, Solver::Eg]
            } else {
                &[Solver::Cgm]
            };
            for &beta in &config.betas {
                for &horizon in &config.horizons {
                    for &solver in solvers {
                        out.push(CellSpec::Hbg { beta, solver, horizon });
                    }
                }
            }
        }
    }
    out
}

fn rap_rows(trace: &MinTrace, problem: &MinProblem, f_star: f64) -> Vec<Vec<Cell>> {
    (1..=trace.horizon())
        .map(|t| {
            let resid = trace.f(t) - f_star;
            let violation = if t == trace.horizon() {
                trace.final_violation
            } else {
                trace.iterates[t].max_violation
            };
            let prev = &trace.iterates[t - 1];
            vec![
                t.into(),
                prev.eta.into(),
                resid.into(),
                resid.abs().into(),
                violation.into(),
                prev.v_norm.into(),
                (trace.x(t) - &problem.x0).norm().into(),
                trace.wall_ms[t - 1].into(),
            ]
        })
        .collect()
}

fn rel_err(x: &DVector<f64>, x_star: &DVector<f64>) -> f64 {
    (x - x_star).norm() / x_star.norm()
}

fn hbg_cgm_rows(trace: &VITrace, problem: &VIProblem, beta: f64, x_star: &DVector<f64>) -> Vec<Vec<Cell>> {
    (1..=trace.horizon())
        .map(|t| {
            let x = trace.x(t);
            let violation = if t == trace.horizon() {
                trace.final_violation
            } else {
                trace.iterates[t].max_violation
            };
            let prev = &trace.iterates[t - 1];
            vec![
                t.into(),
                prev.eta.into(),
                hbg_gap_closed_form(x, beta).into(),
                violation.into(),
                prev.v_norm.into(),
                (x - &problem.x0).norm().into(),
                rel_err(x, x_star).into(),
                trace.wall_ms[t - 1].into(),
            ]
        })
        .collect()
}

fn hbg_baseline_rows(trace: &BaselineTrace, problem: &VIProblem, beta: f64) -> Vec<Vec<Cell>> {
    (1..=trace.horizon())
        .map(|t| {
            let x = &trace.xs[t];
            vec![
                t.into(),
                trace.eta.into(),
                hbg_gap_closed_form(x, beta).into(),
                max_violation(&problem.constraints, x).into(),
                ((x - &trace.xs[t - 1]).norm() / trace.eta).into(),
                (x - &problem.x0).norm().into(),
                trace.rel_err[t].into(),
                trace.wall_ms[t - 1].into(),
            ]
        })
        .collect()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    write_atomic(path, &to_csv(header, rows)?)
}

fn run_cell(cell: &CellSpec, config: &ExperimentConfig, rap: Option<&RapContext>) -> Result<RunRecord> {
    let name = cell.name();
    let csv = config.out_dir.join(format!("{name}.csv"));
    let bounds_path = config.out_dir.join(format!("{name}_bounds.csv"));
    let record = match *cell {
        CellSpec::Rap { schedule, horizon } => {
            let ctx = rap.expect("RAP context is prepared before the runs");
            let solver_cfg = MinSolverConfig::for_problem(&ctx.problem, schedule, horizon);
            let trace = cgm_min_run(&ctx.problem, &solver_cfg, Some(&ctx.reference))?;
            write_csv(&csv, RAP_COLUMNS, &rap_rows(&trace, &ctx.problem, ctx.reference.f))?;
            let bounds = if config.check_bounds {
                let report = certify_min(&trace, &ctx.problem, Some(&ctx.reference), ctx.f_unconstrained)?;
                write_atomic(&bounds_path, report.to_csv().as_bytes())?;
                Some(report)
            } else {
                None
            };
            RunRecord {
                name,
                solver: Solver::Cgm,
                problem: ProblemKind::Rap,
                beta: None,
                schedule: Some(schedule),
                horizon,
                csv,
                bounds,
                final_metric: trace.final_resid.unwrap_or(f64::NAN),
                final_violation: trace.final_violation,
                final_rel_err: None,
                wall_ms: trace.wall_ms.last().copied().unwrap_or(0.0),
            }
        }
        CellSpec::Hbg { beta, solver, horizon } => {
            let problem = hbg_instantiate(config.d, beta, config.seed)?;
            let x_star = problem
                .solution
                .clone()
                .expect("the bilinear game has a closed-form solution");
            let (rows, bounds, final_x, final_violation, wall_ms) = match solver {
                Solver::Cgm => {
                    let solver_cfg = VISolverConfig::for_problem(&problem, horizon)?;
                    let trace = cgm_vi_run(&problem, &solver_cfg)?;
                    let bounds = if config.check_bounds {
                        let report = certify_vi(&trace, &problem)?;
                        write_atomic(&bounds_path, report.to_csv().as_bytes())?;
                        Some(report)
                    } else {
                        None
                    };
                    let all = extended_constraints(&problem, &trace.aux);
                    (
                        hbg_cgm_rows(&trace, &problem, beta, &x_star),
                        bounds,
                        trace.final_x.clone(),
                        max_violation(&all, &trace.final_x),
                        trace.wall_ms.last().copied().unwrap_or(0.0),
                    )
                }
                Solver::Gda | Solver::Eg => {
                    let trace = if solver == Solver::Gda {
                        gda_run(&problem, GDA_DEFAULT_STEP, horizon)?
                    } else {
                        eg_run(&problem, 1.0 / problem.ell_f, horizon)?
                    };
                    let x = trace.xs.last().cloned().unwrap_or_else(|| problem.x0.clone());
                    (
                        hbg_baseline_rows(&trace, &problem, beta),
                        None,
                        x.clone(),
                        max_violation(&problem.constraints, &x),
                        trace.wall_ms.last().copied().unwrap_or(0.0),
                    )
                }
            };
            write_csv(&csv, HBG_COLUMNS, &rows)?;
            RunRecord {
                name,
                solver,
                problem: ProblemKind::Hbg,
                beta: Some(beta),
                schedule: None,
                horizon,
                csv,
                bounds,
                final_metric: hbg_gap_closed_form(&final_x, beta),
                final_violation,
                final_rel_err: Some(rel_err(&final_x, &x_star)),
                wall_ms,
            }
        }
    };
    Ok(record)
}

fn summary_rows(runs: &[RunRecord]) -> Vec<Vec<Cell>> {
    runs.iter()
        .map(|r| {
            let certs = match &r.bounds {
                Some(b) if b.all_pass() => "pass",
                Some(_) => "fail",
                None => "",
            };
            vec![
                r.name.clone().into(),
                r.solver.name().into(),
                r.problem.name().into(),
                r.beta.map(|b| b.to_string()).unwrap_or_default().into(),
                r.schedule.map(|s| s.name()).unwrap_or("").into(),
                r.horizon.into(),
                r.final_metric.into(),
                r.final_violation.into(),
                r.final_rel_err.map(Cell::Float).unwrap_or(Cell::Text(String::new())),
                certs.into(),
                r.wall_ms.into(),
            ]
        })
        .collect()
}

fn figure_specs(config: &ExperimentConfig, runs: &[RunRecord]) -> Vec<FigureSpec> {
    let out = &config.out_dir;
    let max_t = config.horizons.iter().copied().max().unwrap_or(0);
    let mut specs = Vec::new();
    match config.problem {
        ProblemKind::Rap => {
            for &schedule in &config.schedules {
                let series: Vec<(String, PathBuf)> = runs
                    .iter()
                    .filter(|r| r.schedule == Some(schedule))
                    .map(|r| (format!("T={}", r.horizon), r.csv.clone()))
                    .collect();
                specs.push(FigureSpec {
                    output: out.join(format!("rap_{}.svg", schedule.name())),
                    panels: vec![
                        PanelSpec::new("absolute residual", "iter", "abs_f_resid", true),
                        PanelSpec::new("constraint violation", "iter", "max_violation", true),
                    ],
                    series,
                });
            }
            if config.schedules.len() > 1 {
                let series = runs
                    .iter()
                    .filter(|r| r.horizon == max_t)
                    .map(|r| (r.schedule.map(|s| s.name()).unwrap_or("").to_string(), r.csv.clone()))
                    .collect();
                specs.push(FigureSpec {
                    output: out.join("rap_schedules.svg"),
                    panels: vec![
                        PanelSpec::new("absolute residual", "iter", "abs_f_resid", true),
                        PanelSpec::new("residual", "iter", "f_resid", false),
                        PanelSpec::new("constraint violation", "iter", "max_violation", true),
                    ],
                    series,
                });
            }
        }
        ProblemKind::Hbg => {
            let series = runs
                .iter()
                .filter(|r| r.solver == Solver::Cgm && r.horizon == max_t)
                .map(|r| (format!("beta={}", r.beta.unwrap_or(f64::NAN)), r.csv.clone()))
                .collect();
            specs.push(FigureSpec {
                output: out.join("hbg_cgm.svg"),
                panels: vec![
                    PanelSpec::new("strong gap", "iter", "gap", true),
                    PanelSpec::new("constraint violation", "iter", "max_violation", true),
                ],
                series,
            });
            if config.run_baselines {
                for &beta in &config.betas {
                    let series = runs
                        .iter()
                        .filter(|r| r.beta == Some(beta) && r.horizon == max_t)
                        .map(|r| (r.solver.name().to_uppercase(), r.csv.clone()))
                        .collect();
                    specs.push(FigureSpec {
                        output: out.join(format!("hbg_b{beta}_compare.svg")),
                        panels: vec![
                            PanelSpec::new("relative error", "iter", "rel_err", true),
                            PanelSpec::new("relative error vs time", "wall_ms", "rel_err", true),
                        ],
                        series,
                    });
                }
            }
        }
    }
    specs
}

/// Runs every (solver, horizon) cell of `config` and writes CSVs, bounds, a summary and figures.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;

    let rap = match config.problem {
        ProblemKind::Rap => {
            let problem = rap_generate(config.d, config.seed)?;
            let data = problem.rap.as_ref().expect("generated RAP carries its data");
            let solution = cached_rap_reference(&config.reference_dir(), data, config.d, config.seed)?;
            let (_, f_unconstrained) = rap_unconstrained_min(data)?;
            Some(RapContext {
                reference: solution.reference,
                f_unconstrained,
                problem,
            })
        }
        ProblemKind::Hbg => None,
    };

    let cells = cells(config);
    let work = || -> Vec<Result<RunRecord>> {
        cells
            .par_iter()
            .map(|cell| {
                run_cell(cell, config, rap.as_ref()).map_err(|e| Error::Run {
                    run: cell.name(),
                    source: Box::new(e),
                })
            })
            .collect()
    };
    let results = match workers_from_env()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let summary_csv = config.out_dir.join("summary.csv");
    write_csv(&summary_csv, SUMMARY_COLUMNS, &summary_rows(&runs))?;

    let mut figures = Vec::new();
    if config.plots {
        for spec in figure_specs(config, &runs) {
            if !spec.series.is_empty() {
                figures.push(emit_plots(&spec)?);
            }
        }
    }
    Ok(ExperimentSummary {
        runs,
        summary_csv,
        figures,
    })
}
