//! Acceptance checks, one test per criterion. Each prints a PASS/FAIL line.
//!
//! `cargo test -p cgm-core --test acceptance -- --nocapture`

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use cgm_core::harness::{run_experiment, ExperimentConfig, ProblemKind};
use cgm_core::metrics::{max_violation, passes, slack_for};
use cgm_core::problems::{build_polytope, max_constraint, SmoothConstraint};
use cgm_core::qp::{brute_force_projection, DEFAULT_TOL};
use cgm_core::reference::{solve_rap_reference, ReferenceSolution};
use cgm_core::*;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: &str, pass: bool, detail: String) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion} {status}: {detail}");
    assert!(pass, "criterion {criterion}: {detail}");
}

fn cert_line(report: &BoundsReport, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in names {
        match report.get(name) {
            Some(c) => {
                ok &= c.pass;
                parts.push(format!(
                    "{name} {} (lhs {:.3e}, rhs {:.3e}, t={:?})",
                    if c.pass { "ok" } else { "violated" },
                    c.lhs,
                    c.rhs,
                    c.iteration
                ));
            }
            None => {
                ok = false;
                parts.push(format!("{name} missing"));
            }
        }
    }
    (ok, parts.join("; "))
}

struct RapCase {
    problem: MinProblem,
    solution: ReferenceSolution,
    f_unconstrained: f64,
    constant: MinTrace,
    varying: MinTrace,
    constant_secs: f64,
}

const RAP_T: usize = 2000;

fn rap_case() -> &'static RapCase {
    static CASE: OnceLock<RapCase> = OnceLock::new();
    CASE.get_or_init(|| {
        let start = Instant::now();
        let problem = rap_generate(50, 42).unwrap();
        let data = problem.rap.as_ref().unwrap();
        let solution = solve_rap_reference(data, &BarrierOptions::default()).unwrap();
        let (_, f_unconstrained) = rap_unconstrained_min(data).unwrap();
        let cfg = MinSolverConfig::for_problem(&problem, StepSchedule::Constant, RAP_T);
        let constant = cgm_min_run(&problem, &cfg, Some(&solution.reference)).unwrap();
        let constant_secs = start.elapsed().as_secs_f64();
        let cfg = MinSolverConfig::for_problem(&problem, StepSchedule::Varying, RAP_T);
        let varying = cgm_min_run(&problem, &cfg, Some(&solution.reference)).unwrap();
        RapCase {
            problem,
            solution,
            f_unconstrained,
            constant,
            varying,
            constant_secs,
        }
    })
}

fn random_polytope(rng: &mut ChaCha8Rng) -> (DVector<f64>, VelocityPolytope) {
    let n = rng.random_range(1..=4);
    let rows = rng.random_range(0..=6);
    // Rows satisfied by a hidden point keep the instance feasible.
    let anchor = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut polytope = VelocityPolytope::new(n);
    for _ in 0..rows {
        let normal = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let rhs = normal.dot(&anchor) + rng.random_range(0.0..1.0);
        polytope.push(HalfspaceRow::new(normal, rhs).unwrap()).unwrap();
    }
    let target = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    (target, polytope)
}

#[test]
fn criterion_01_qp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..1000 {
        let (target, polytope) = random_polytope(&mut rng);
        let fast = project_velocity(&target, &polytope, DEFAULT_TOL).unwrap();
        let slow = brute_force_projection(&target, &polytope).unwrap();
        let err = (fast.v - slow).amax();
        worst = worst.max(err);
        if err > 1e-8 {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "1",
        failures == 0 && secs < 5.0,
        format!("1000 instances, {failures} mismatches, max |dv| {worst:.2e}, {secs:.3} s"),
    );
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let w = DVector::from_fn(n, |_, _| -rng.random_range(f64::EPSILON..1.0).ln());
    let s = w.sum();
    w / s
}

/// Counts rows of `V_alpha(x)` violated by `alpha (y - x)` and by `v + (y - x)`.
fn membership_failures(
    constraints: &[SmoothConstraint],
    x: &DVector<f64>,
    y: &DVector<f64>,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> (usize, usize) {
    let polytope = build_polytope(constraints, x, alpha).unwrap();
    let row_ok = |row: &HalfspaceRow, v: &DVector<f64>| {
        let lhs = row.normal().dot(v);
        passes(lhs, row.rhs(), slack_for(lhs) + 1e-9 * row.normal().norm() * v.norm())
    };
    let u = (y - x) * alpha;
    let first = polytope.rows().iter().filter(|r| !row_ok(r, &u)).count();

    // A member of the polytope: projection of a random target.
    let target = DVector::from_fn(x.len(), |_, _| rng.random_range(-1.0..1.0));
    let v = project_velocity(&target, &polytope, DEFAULT_TOL).unwrap().v;
    let w = &v + (y - x);
    let member = polytope.rows().iter().all(|r| row_ok(r, &v));
    let second = if member {
        polytope.rows().iter().filter(|r| !row_ok(r, &w)).count()
    } else {
        1
    };
    (first, second)
}

#[test]
fn criterion_02_velocity_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut totals = BTreeMap::new();
    for family in ["rap", "hbg"] {
        let (mut f1, mut f2, mut rows) = (0, 0, 0);
        for sample in 0..1000 {
            let seed = sample as u64 % 10;
            let (constraints, x, y) = if family == "rap" {
                let p = rap_generate(8, seed).unwrap();
                let data = p.rap.as_ref().unwrap();
                let center = solve_rap_reference(data, &BarrierOptions::default()).unwrap();
                let mut y = center.reference.x.clone();
                let z = dirichlet(&mut rng, 8);
                let mut s = 1.0;
                while s > 1e-6 {
                    let cand = &center.reference.x * (1.0 - s) + &z * s;
                    if max_constraint(&p.constraints, &cand) <= 0.0 {
                        y = cand;
                        break;
                    }
                    s *= 0.5;
                }
                let x = DVector::from_fn(8, |_, _| rng.random_range(-0.5..1.0));
                (p.constraints, x, y)
            } else {
                let d = 6;
                let p = hbg_instantiate(d, rng.random_range(0.05..0.95), seed).unwrap();
                let mut y = dirichlet(&mut rng, d);
                y.extend(dirichlet(&mut rng, d).iter().copied());
                let x = DVector::from_fn(2 * d, |_, _| rng.random_range(-0.5..1.0));
                (p.constraints, x, y)
            };
            assert!(max_constraint(&constraints, &y) <= 1e-12, "sampled y must be feasible");
            let alpha = 10f64.powf(rng.random_range(-2.0..2.0));
            rows += build_polytope(&constraints, &x, alpha).unwrap().len();
            let (a, b) = membership_failures(&constraints, &x, &y, alpha, &mut rng);
            f1 += a;
            f2 += b;
        }
        totals.insert(family, (f1, f2, rows));
    }
    let pass = totals.values().all(|&(a, b, _)| a == 0 && b == 0);
    let detail = totals
        .iter()
        .map(|(k, (a, b, rows))| format!("{k}: {rows} rows checked, {a} + {b} failures"))
        .collect::<Vec<_>>()
        .join("; ");
    report("2", pass, detail);
}

#[test]
fn criterion_03_constant_rate() {
    let case = rap_case();
    let cert = case.solution.certificate.max_residual();
    let report_min = certify_min(
        &case.constant,
        &case.problem,
        Some(&case.solution.reference),
        case.f_unconstrained,
    )
    .unwrap();
    let (certs_ok, detail) = cert_line(&report_min, &["residual_rate", "contraction"]);
    let pass = certs_ok && cert <= 1e-8 && case.constant_secs < 120.0;
    report(
        "3",
        pass,
        format!(
            "T={RAP_T}, residual {:.3e}, reference KKT {cert:.2e}, {:.2} s; {detail}",
            case.constant.final_resid.unwrap(),
            case.constant_secs
        ),
    );
}

#[test]
fn criterion_04_varying_rate() {
    let case = rap_case();
    let r = certify_min(
        &case.varying,
        &case.problem,
        Some(&case.solution.reference),
        case.f_unconstrained,
    )
    .unwrap();
    let (ok, detail) = cert_line(&r, &["residual_rate"]);
    report("4", ok, format!("kappa {:.3}; {detail}", case.problem.kappa()));
}

#[test]
fn criterion_05_boundedness() {
    let case = rap_case();
    let r = certify_min(
        &case.constant,
        &case.problem,
        Some(&case.solution.reference),
        case.f_unconstrained,
    )
    .unwrap();
    let (ok, detail) = cert_line(&r, &["v_bound_c1", "x_bound_c2", "v_sq_vs_f"]);
    report("5", ok, detail);
}

#[test]
fn criterion_06_feasibility() {
    let case = rap_case();
    let reference = Some(&case.solution.reference);
    let rc = certify_min(&case.constant, &case.problem, reference, case.f_unconstrained).unwrap();
    let rv = certify_min(&case.varying, &case.problem, reference, case.f_unconstrained).unwrap();
    let (ok_c, dc) = cert_line(&rc, &["feasibility_constant"]);
    let (ok_v, dv) = cert_line(&rv, &["feasibility_varying"]);
    report(
        "6",
        ok_c && ok_v,
        format!("L_g {:.3}; {dc}; {dv}", rc.constant("L_g").unwrap_or(f64::NAN)),
    );
}

#[test]
fn criterion_07_vi_certificates() {
    let start = Instant::now();
    let problem = hbg_instantiate(50, 0.8, 42).unwrap();
    let cfg = VISolverConfig::for_problem(&problem, 3000).unwrap();
    let trace = cgm_vi_run(&problem, &cfg).unwrap();
    let r = certify_vi(&trace, &problem).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let x_star = DVector::from_element(100, 1.0 / 50.0);
    let gap_star = hbg_gap_closed_form(&x_star, 0.8);
    let (ok, detail) = cert_line(
        &r,
        &["x_bound_c3", "v_bound_c4", "control_v_x", "gap_ergodic", "feasibility_nonergodic"],
    );
    report(
        "7",
        ok && gap_star.abs() <= 1e-12 && secs < 180.0,
        format!("gap(x*) {gap_star:.1e}, {secs:.2} s; {detail}"),
    );
}

#[test]
fn criterion_08a_horizon_trend() {
    let case = rap_case();
    let horizons = [100, 150, 200, 250, 1500, 2000, 2500, 3000];
    let mut finals = Vec::new();
    for t in horizons {
        let cfg = MinSolverConfig::for_problem(&case.problem, StepSchedule::Constant, t);
        let trace = cgm_min_run(&case.problem, &cfg, Some(&case.solution.reference)).unwrap();
        finals.push((t, trace.final_resid.unwrap().abs(), trace.final_violation));
    }
    let monotone = finals
        .windows(2)
        .all(|w| w[1].1 <= w[0].1 && w[1].2 <= w[0].2);
    let detail = finals
        .iter()
        .map(|(t, r, v)| format!("T={t}: |resid| {r:.2e} viol {v:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    report("8a", monotone, detail);
}

#[test]
fn criterion_08b_schedule_trend() {
    let case = rap_case();
    let early = RAP_T / 10;
    let overshoot = case.varying.iterates[1..early]
        .iter()
        .find(|it| it.f_resid.unwrap() < 0.0 && it.max_violation > 0.0)
        .map(|it| it.t);
    let converged = |trace: &MinTrace| {
        let peak_resid = trace
            .iterates
            .iter()
            .map(|it| it.f_resid.unwrap().abs())
            .fold(0.0, f64::max);
        let peak_viol = trace.iterates.iter().map(|it| it.max_violation).fold(0.0, f64::max);
        let tail = RAP_T / 2;
        let tail_resid = trace.iterates[tail].f_resid.unwrap().abs();
        let tail_viol = trace.iterates[tail].max_violation;
        // Both measures shrink over the second half and end well below their peaks.
        let resid = trace.final_resid.unwrap().abs();
        let viol = trace.final_violation;
        let ok = resid < tail_resid && viol < tail_viol && resid < 0.1 * peak_resid && viol < 0.1 * peak_viol;
        (ok, format!("|resid| {resid:.2e} (peak {peak_resid:.2e}), viol {viol:.2e} (peak {peak_viol:.2e})"))
    };
    let (ok_c, dc) = converged(&case.constant);
    let (ok_v, dv) = converged(&case.varying);
    report(
        "8b",
        overshoot.is_some() && ok_c && ok_v,
        format!("first overshoot at t={overshoot:?}; constant {dc}; varying {dv}"),
    );
}

#[test]
fn criterion_08c_baseline_comparison() {
    let problem = hbg_instantiate(50, 0.8, 42).unwrap();
    let x_star = problem.solution.clone().unwrap();
    let t = 1000;
    let cfg = VISolverConfig::for_problem(&problem, t).unwrap();
    let cgm = cgm_vi_run(&problem, &cfg).unwrap();
    let cgm_err = (&cgm.final_x - &x_star).norm() / x_star.norm();
    let gda = gda_run(&problem, baselines::GDA_DEFAULT_STEP, t).unwrap();
    let eg = eg_run(&problem, 1.0 / problem.ell_f, t).unwrap();
    let (gda_err, eg_err) = (gda.rel_err[t], eg.rel_err[t]);
    report(
        "8c",
        cgm_err <= gda_err && cgm_err <= eg_err,
        format!("T={t} relative error: CGM {cgm_err:.3e}, GDA {gda_err:.3e}, EG {eg_err:.3e}"),
    );
}

#[test]
fn criterion_09_reference_consistency() {
    let problem = rap_generate(50, 42).unwrap();
    let data = problem.rap.as_ref().unwrap();
    let a = solve_rap_reference(data, &BarrierOptions::default()).unwrap();
    let b = solve_rap_reference(
        data,
        &BarrierOptions {
            factor: 5.0,
            ..BarrierOptions::default()
        },
    )
    .unwrap();
    let diff = (a.reference.f - b.reference.f).abs();
    let (ka, kb) = (a.certificate.max_residual(), b.certificate.max_residual());
    let feasible = max_violation(&problem.constraints, &a.reference.x) <= 1e-12;
    report(
        "9",
        diff <= 1e-7 && ka <= 1e-8 && kb <= 1e-8 && feasible,
        format!("|f10 - f5| {diff:.2e}, KKT {ka:.2e} / {kb:.2e}"),
    );
}

fn csv_without_timing(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.split('\n');
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let skip = header.iter().position(|h| *h == "wall_ms");
    let keep = |line: &str| {
        line.split(',')
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, f)| f)
            .collect::<Vec<_>>()
            .join(",")
    };
    std::iter::once(keep(&header.join(",")))
        .chain(lines.map(keep))
        .collect::<Vec<_>>()
        .join("\n")
}

fn csv_files(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, csv_without_timing(&path));
        }
    }
    out
}

#[test]
fn criterion_10_determinism() {
    let root = tempfile::tempdir().unwrap();
    let mut checked = 0;
    let mut mismatched = Vec::new();
    for (label, problem) in [("rap", ProblemKind::Rap), ("hbg", ProblemKind::Hbg)] {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let mut config = ExperimentConfig {
                problem,
                d: 20,
                horizons: vec![150, 300],
                plots: false,
                out_dir: root.path().join(format!("{label}{rep}")),
                ..ExperimentConfig::default()
            };
            match problem {
                ProblemKind::Rap => {
                    config.schedules = vec![StepSchedule::Constant, StepSchedule::Varying];
                }
                ProblemKind::Hbg => {
                    config.betas = vec![0.5, 0.8];
                    config.run_baselines = true;
                }
            }
            run_experiment(&config).unwrap();
            outputs.push(csv_files(&config.out_dir));
        }
        assert!(!outputs[0].is_empty());
        for (name, content) in &outputs[0] {
            checked += 1;
            if outputs[1].get(name) != Some(content) {
                mismatched.push(name.clone());
            }
        }
        if outputs[0].len() != outputs[1].len() {
            mismatched.push(format!("{label}: file sets differ"));
        }
    }
    report(
        "10",
        mismatched.is_empty(),
        format!("{checked} CSV files compared, mismatches: {mismatched:?}"),
    );
}
