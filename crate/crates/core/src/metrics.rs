//! Optimality and feasibility measures, and post-hoc certificates that check
//! the proven bounds along a realized trajectory.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::cgm_min::{MinTrace, StepSchedule};
use crate::cgm_vi::{extended_constraints, VITrace};
use crate::error::{Error, Result};
use crate::problems::{max_constraint, MinProblem, SmoothConstraint, VIProblem};
use crate::reference::Reference;

/// Absolute part of the certificate slack.
pub const SLACK_ABS: f64 = 1e-9;
/// Relative part of the certificate slack.
pub const SLACK_REL: f64 = 1e-7;

pub fn slack_for(lhs: f64) -> f64 {
    SLACK_ABS + SLACK_REL * lhs.abs()
}

/// `lhs <= rhs + slack`
pub fn passes(lhs: f64, rhs: f64, slack: f64) -> bool {
    lhs <= rhs + slack
}

/// Strong gap `max_{y in C} <F(x), x - y>` of the bilinear game over two unit simplices.
pub fn hbg_gap_closed_form(x: &DVector<f64>, beta: f64) -> f64 {
    assert!(x.len().is_multiple_of(2), "HBG point must have even length");
    let d = x.len() / 2;
    let (x1, x2) = (x.rows(0, d), x.rows(d, d));
    let f1 = x1 * (2.0 * beta) + x2 * (1.0 - beta);
    let f2 = x1 * (-(1.0 - beta)) + x2 * (2.0 * beta);
    f1.dot(&x1) + f2.dot(&x2) - f1.min() - f2.min()
}

/// `max(0, max_i g_i(x))`
pub fn max_violation(constraints: &[SmoothConstraint], x: &DVector<f64>) -> f64 {
    max_constraint(constraints, x).max(0.0)
}

/// Running maximum of `||grad g_i(x)||` over the points and constraints seen so far.
pub fn running_lg<'a, I>(constraints: &[SmoothConstraint], points: I) -> Vec<f64>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let mut best = 0.0f64;
    points
        .into_iter()
        .map(|x| {
            for g in constraints {
                best = best.max(g.gradient_norm(x));
            }
            best
        })
        .collect()
}

pub fn empirical_lg<'a, I>(constraints: &[SmoothConstraint], points: I) -> f64
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    running_lg(constraints, points).last().copied().unwrap_or(0.0)
}

/// Worst case of one inequality along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub name: String,
    /// Values at the iteration with the smallest margin `rhs + slack - lhs`.
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub iteration: Option<usize>,
    pub checks: usize,
    pub pass: bool,
}

impl Certificate {
    pub fn margin(&self) -> f64 {
        self.rhs + self.slack - self.lhs
    }
}

struct Tracker {
    name: String,
    worst: Option<(usize, f64, f64, f64)>,
    checks: usize,
    pass: bool,
}

impl Tracker {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            worst: None,
            checks: 0,
            pass: true,
        }
    }

    fn check(&mut self, t: usize, lhs: f64, rhs: f64) {
        let slack = slack_for(lhs);
        let ok = passes(lhs, rhs, slack);
        self.pass &= ok;
        self.checks += 1;
        let margin = rhs + slack - lhs;
        let replace = match self.worst {
            None => true,
            Some((_, l, r, s)) => margin < r + s - l,
        };
        if replace {
            self.worst = Some((t, lhs, rhs, slack));
        }
    }

    fn finish(self) -> Certificate {
        let (iteration, lhs, rhs, slack) = match self.worst {
            Some((t, l, r, s)) => (Some(t), l, r, s),
            None => (None, 0.0, 0.0, 0.0),
        };
        Certificate {
            name: self.name,
            lhs,
            rhs,
            slack,
            iteration,
            checks: self.checks,
            pass: self.pass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Track {
    Min,
    Vi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub track: Track,
    /// Named constants (`C1`, `C2`, or `C3`, `C4`, plus `L_g` and `ell_g`).
    pub constants: Vec<(String, f64)>,
    pub certificates: Vec<Certificate>,
}

impl BoundsReport {
    pub fn all_pass(&self) -> bool {
        self.certificates.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Certificate> {
        self.certificates.iter().filter(|c| !c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Certificate> {
        self.certificates.iter().find(|c| c.name == name)
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn csv_header() -> &'static str {
        "certificate,lhs,rhs,slack,margin,iter,checks,pass"
    }

    /// Constants first (as `const:<name>` rows with the value in `lhs`), then one row per certificate.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(Self::csv_header());
        out.push('\n');
        for (name, value) in &self.constants {
            let _ = writeln!(out, "const:{name},{value:.16e},,,,,,");
        }
        for c in &self.certificates {
            let iter = c.iteration.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
                c.name,
                c.lhs,
                c.rhs,
                c.slack,
                c.margin(),
                iter,
                c.checks,
                c.pass
            );
        }
        out
    }
}

/// Certificates for a CGM-Min run.
///
/// `f_star_unconstrained` is the unconstrained minimum of `f`. The rate and
/// feasibility certificates need `alpha = mu` and are skipped otherwise.
pub fn certify_min(
    trace: &MinTrace,
    problem: &MinProblem,
    reference: Option<&Reference>,
    f_star_unconstrained: f64,
) -> Result<BoundsReport> {
    let reference = reference.ok_or(Error::ReferenceMissing)?;
    let (mu, ell_f, alpha) = (problem.mu, problem.ell_f, trace.config.alpha);
    let kappa = problem.kappa();
    let ell_g = problem.ell_g();
    let f_opt = reference.f;
    let f0 = trace.f(0);
    let gap0 = f0 - f_opt;
    let horizon = trace.horizon();

    let c1 = (4.0 * (2.0 * ell_f - alpha) * gap0 + 8.0 * ell_f * (f_opt - f_star_unconstrained))
        .max(0.0)
        .sqrt();
    let grad_star = problem.objective.gradient(&reference.x).norm();
    let c2 = (grad_star + (grad_star * grad_star + 2.0 * mu * gap0).max(0.0).sqrt()) / mu;
    let lg = empirical_lg(&problem.constraints, (0..=horizon).map(|t| trace.x(t)));

    let mut v_f = Tracker::new("v_sq_vs_f");
    let mut v_c1 = Tracker::new("v_bound_c1");
    let mut x_c2 = Tracker::new("x_bound_c2");
    let mut contraction = Tracker::new("contraction");
    for (t, it) in trace.iterates.iter().enumerate() {
        let v_sq = it.v.norm_squared();
        v_f.check(
            t,
            v_sq,
            4.0 * (2.0 * ell_f - alpha) * (it.f_value - f_opt)
                + 8.0 * ell_f * (f_opt - f_star_unconstrained),
        );
        v_c1.check(t, it.v_norm, c1);
        let resid_next = trace.f(t + 1) - f_opt;
        contraction.check(t, resid_next, (1.0 - alpha * it.eta) * (it.f_value - f_opt));
    }
    for t in 0..=horizon {
        x_c2.check(t, (trace.x(t) - &reference.x).norm(), c2);
    }
    let mut certificates = vec![v_f.finish(), v_c1.finish(), x_c2.finish(), contraction.finish()];

    let violation = |t: usize| {
        if t == horizon {
            trace.final_violation
        } else {
            trace.iterates[t].max_violation
        }
    };
    if alpha == mu {
        match trace.config.schedule {
            StepSchedule::Constant => {
                let big_t = trace.config.horizon as f64;
                let mut rate = Tracker::new("residual_rate");
                if horizon == trace.config.horizon {
                    rate.check(horizon, trace.f(horizon) - f_opt, gap0 / big_t);
                }
                let mut feas = Tracker::new("feasibility_constant");
                let rhs = c1 / mu * f64::max(c1 * ell_g / (2.0 * mu), lg) * big_t.ln() / big_t;
                for t in 0..=horizon {
                    feas.check(t, violation(t), rhs);
                }
                certificates.push(rate.finish());
                certificates.push(feas.finish());
            }
            StepSchedule::Varying => {
                let mut rate = Tracker::new("residual_rate");
                for t in 1..=horizon {
                    let tf = t as f64;
                    rate.check(t, trace.f(t) - f_opt, (kappa - 1.0) / (tf + kappa - 1.0) * gap0);
                }
                let mut feas = Tracker::new("feasibility_varying");
                for t in 1..horizon {
                    let tf = t as f64;
                    let denom = tf + kappa + 1.0;
                    let rhs = 2.0 * c1 / (mu * denom) * (lg + ell_g * c1 / (2.0 * mu))
                        + ell_g * c1 * c1 * tf.ln() / (mu * mu * denom);
                    feas.check(t + 1, violation(t + 1), rhs);
                }
                certificates.push(rate.finish());
                certificates.push(feas.finish());
            }
        }
    }

    Ok(BoundsReport {
        track: Track::Min,
        constants: vec![
            ("C1".into(), c1),
            ("C2".into(), c2),
            ("L_g".into(), lg),
            ("ell_g".into(), ell_g),
        ],
        certificates,
    })
}

/// Certificates for a CGM-VI run. The gap certificate is only evaluated for the bilinear game.
pub fn certify_vi(trace: &VITrace, problem: &VIProblem) -> Result<BoundsReport> {
    let horizon = trace.horizon();
    if horizon == 0 {
        return Err(Error::InvalidConfig("cannot certify an empty trace".into()));
    }
    let (mu, ell) = (problem.mu, problem.ell_f);
    let kappa_sq = trace.kappa * trace.kappa;
    let delta = trace.config.delta;
    let scale = trace.fx0_norm_sq + problem.relaxed_offset;
    let c3 = ((2.0 * delta + 1.25) * scale / (ell * ell)).sqrt();
    let c4 = ((16.0 * delta + 20.0) * scale).sqrt();

    let constraints = extended_constraints(problem, &trace.aux);
    let ell_g = constraints.iter().map(|g| g.smoothness()).fold(0.0, f64::max);
    let lg = empirical_lg(
        &constraints,
        (0..=horizon).map(|t| trace.x(t)).chain(std::iter::once(&trace.ergodic)),
    );

    let mut x_c3 = Tracker::new("x_bound_c3");
    let mut v_c4 = Tracker::new("v_bound_c4");
    let mut control = Tracker::new("control_v_x");
    for (t, it) in trace.iterates.iter().enumerate() {
        v_c4.check(t, it.v_norm, c4);
        control.check(
            t,
            it.v_norm * it.v_norm,
            8.0 * ell * ell * it.dist_x0 * it.dist_x0 + 10.0 * scale,
        );
    }
    for t in 0..=horizon {
        x_c3.check(t, (trace.x(t) - &problem.x0).norm(), c3);
    }

    let big_t = horizon as f64;
    let erg_denom = big_t + 32.0 * kappa_sq - 3.0;
    let mut certificates = vec![x_c3.finish(), v_c4.finish(), control.finish()];

    if let Some(hbg) = &problem.hbg {
        let mut gap = Tracker::new("gap_ergodic");
        let d = problem.diameter;
        let rhs = 2.0 * mu * d * d * (8.0 * kappa_sq - 1.0) * (16.0 * kappa_sq - 1.0) / (big_t * erg_denom)
            + (16.0 * delta + 20.0) * scale / (mu * erg_denom);
        gap.check(horizon, hbg_gap_closed_form(&trace.ergodic, hbg.beta), rhs);
        certificates.push(gap.finish());
    }

    let mut erg_feas = Tracker::new("feasibility_ergodic");
    let rhs = 4.0 * c4 / (mu * erg_denom) * (lg + ell_g * c4 / (2.0 * mu))
        + 2.0 * ell_g * c4 * c4 * big_t.ln() / (mu * mu * erg_denom);
    erg_feas.check(horizon, max_violation(&constraints, &trace.ergodic), rhs);
    certificates.push(erg_feas.finish());

    let mut feas = Tracker::new("feasibility_nonergodic");
    for t in 1..horizon {
        let tf = t as f64;
        let denom = tf + 16.0 * kappa_sq + 1.0;
        let rhs = 2.0 * c4 / (mu * denom) * (lg + ell_g * c4 / (2.0 * mu))
            + ell_g * c4 * c4 * tf.ln() / (mu * mu * denom);
        let lhs = if t + 1 == horizon {
            trace.final_violation
        } else {
            trace.iterates[t + 1].max_violation
        };
        feas.check(t + 1, lhs, rhs);
    }
    certificates.push(feas.finish());

    Ok(BoundsReport {
        track: Track::Vi,
        constants: vec![
            ("C3".into(), c3),
            ("C4".into(), c4),
            ("delta".into(), delta),
            ("L_g".into(), lg),
            ("ell_g".into(), ell_g),
        ],
        certificates,
    })
}
