//! Constrained gradient method for strongly convex minimization (CGM-Min).

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problems::{max_constraint, polytope_for, violated_set, MinProblem};
use crate::qp::{project_velocity, DEFAULT_TOL};
use crate::reference::Reference;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StepSchedule {
    /// `eta = ln T / (mu T)` for every iteration.
    Constant,
    /// `eta_t = 1 / (mu (t + kappa))`.
    Varying,
}

impl StepSchedule {
    pub fn name(self) -> &'static str {
        match self {
            StepSchedule::Constant => "constant",
            StepSchedule::Varying => "varying",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinSolverConfig {
    pub alpha: f64,
    pub schedule: StepSchedule,
    pub horizon: usize,
    pub qp_tol: f64,
}

impl MinSolverConfig {
    /// `alpha = mu`, default QP tolerance.
    pub fn for_problem(problem: &MinProblem, schedule: StepSchedule, horizon: usize) -> Self {
        Self {
            alpha: problem.mu,
            schedule,
            horizon,
            qp_tol: DEFAULT_TOL,
        }
    }

    pub fn validate(&self, problem: &MinProblem) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= problem.mu) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {} must lie in (0, mu = {}]",
                self.alpha, problem.mu
            )));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.qp_tol > 0.0) {
            return Err(Error::InvalidConfig("qp_tol must be positive".into()));
        }
        if self.schedule == StepSchedule::Constant {
            validate_constant_horizon(self.horizon, problem.kappa())?;
        }
        Ok(())
    }
}

/// `T >= kappa ln T`, and `T >= 2` so the step is nonzero.
pub fn validate_constant_horizon(horizon: usize, kappa: f64) -> Result<()> {
    if horizon < 2 {
        return Err(Error::ScheduleInvalid(format!(
            "T = {horizon} gives eta = ln T / (mu T) = 0"
        )));
    }
    let t = horizon as f64;
    if t < kappa * t.ln() {
        return Err(Error::ScheduleInvalid(format!(
            "T = {horizon} violates T >= kappa ln T = {:.3}",
            kappa * t.ln()
        )));
    }
    Ok(())
}

pub fn step_constant(horizon: usize, mu: f64) -> f64 {
    let t = horizon as f64;
    t.ln() / (mu * t)
}

pub fn step_varying(t: usize, mu: f64, kappa: f64) -> f64 {
    1.0 / (mu * (t as f64 + kappa))
}

/// Result of one CGM-Min update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub x_next: DVector<f64>,
    pub v: DVector<f64>,
    /// Number of violated constraints at `x`.
    pub violated: usize,
    pub qp_iterations: usize,
    pub kkt_residual: f64,
}

/// `x+ = x + eta v` with `v` the projection of `-grad f(x)` onto the velocity polytope at `x`.
pub fn cgm_min_step(
    problem: &MinProblem,
    x: &DVector<f64>,
    alpha: f64,
    eta: f64,
    qp_tol: f64,
) -> std::result::Result<StepOutcome, crate::qp::QpError> {
    let grad = problem.objective.gradient(x);
    let violated = violated_set(&problem.constraints, x);
    let (v, qp_iterations, kkt_residual) = if violated.is_empty() {
        (-grad, 0, 0.0)
    } else {
        let polytope = polytope_for(&problem.constraints, x, &violated, alpha)?;
        let res = project_velocity(&grad, &polytope, qp_tol)?;
        (res.v, res.iterations, res.kkt_residual)
    };
    let x_next = x + &v * eta;
    Ok(StepOutcome {
        x_next,
        v,
        violated: violated.len(),
        qp_iterations,
        kkt_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinIterate {
    pub t: usize,
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub eta: f64,
    pub f_value: f64,
    /// `f(x^t) - f(x*)`, once a reference is attached.
    pub f_resid: Option<f64>,
    /// `max(0, max_i g_i(x^t))`
    pub max_violation: f64,
    pub v_norm: f64,
    pub violated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinTrace {
    pub config: MinSolverConfig,
    /// Iterates `t = 0..T`, each with the step taken from it.
    pub iterates: Vec<MinIterate>,
    pub final_x: DVector<f64>,
    pub final_f: f64,
    pub final_violation: f64,
    pub final_resid: Option<f64>,
    /// Cumulative solver time after each step.
    pub wall_ms: Vec<f64>,
}

impl MinTrace {
    pub fn horizon(&self) -> usize {
        self.iterates.len()
    }

    /// `x^t` for `t = 0..=T`.
    pub fn x(&self, t: usize) -> &DVector<f64> {
        if t == self.iterates.len() {
            &self.final_x
        } else {
            &self.iterates[t].x
        }
    }

    /// `f(x^t)` for `t = 0..=T`.
    pub fn f(&self, t: usize) -> f64 {
        if t == self.iterates.len() {
            self.final_f
        } else {
            self.iterates[t].f_value
        }
    }

    /// The first `k` steps, ending at `x^k`.
    pub fn truncated(&self, k: usize) -> MinTrace {
        let k = k.min(self.horizon());
        let (final_x, final_f, final_violation, final_resid) = if k == self.horizon() {
            (self.final_x.clone(), self.final_f, self.final_violation, self.final_resid)
        } else {
            let it = &self.iterates[k];
            (it.x.clone(), it.f_value, it.max_violation, it.f_resid)
        };
        MinTrace {
            config: self.config.clone(),
            iterates: self.iterates[..k].to_vec(),
            final_x,
            final_f,
            final_violation,
            final_resid,
            wall_ms: self.wall_ms[..k.min(self.wall_ms.len())].to_vec(),
        }
    }

    pub fn attach_reference(&mut self, f_star: f64) {
        for it in &mut self.iterates {
            it.f_resid = Some(it.f_value - f_star);
        }
        self.final_resid = Some(self.final_f - f_star);
    }
}

/// Runs `T` iterations of CGM-Min from `problem.x0`.
pub fn cgm_min_run(
    problem: &MinProblem,
    config: &MinSolverConfig,
    reference: Option<&Reference>,
) -> Result<MinTrace> {
    config.validate(problem)?;
    let horizon = config.horizon;
    let kappa = problem.kappa();
    let start = Instant::now();

    let mut iterates = Vec::with_capacity(horizon);
    let mut wall_ms = Vec::with_capacity(horizon);
    let mut x = problem.x0.clone();
    for t in 0..horizon {
        let eta = match config.schedule {
            StepSchedule::Constant => step_constant(horizon, problem.mu),
            StepSchedule::Varying => step_varying(t, problem.mu, kappa),
        };
        let step = cgm_min_step(problem, &x, config.alpha, eta, config.qp_tol)
            .map_err(|source| Error::Subproblem { iteration: t, source })?;
        wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        let f_value = problem.objective.value(&x);
        iterates.push(MinIterate {
            t,
            v_norm: step.v.norm(),
            max_violation: max_constraint(&problem.constraints, &x).max(0.0),
            f_resid: None,
            f_value,
            eta,
            violated: step.violated,
            v: step.v,
            x,
        });
        x = step.x_next;
    }

    let final_f = problem.objective.value(&x);
    let mut trace = MinTrace {
        config: config.clone(),
        iterates,
        final_violation: max_constraint(&problem.constraints, &x).max(0.0),
        final_x: x,
        final_f,
        final_resid: None,
        wall_ms,
    };
    if let Some(reference) = reference {
        trace.attach_reference(reference.f);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{QuadraticObjective, SmoothConstraint};
    use nalgebra::{dvector, DMatrix};
    use std::sync::Arc;

    fn toy(x0: DVector<f64>, constraints: Vec<SmoothConstraint>) -> MinProblem {
        let objective = Arc::new(QuadraticObjective {
            hessian: DMatrix::identity(2, 2),
            linear: DVector::zeros(2),
        });
        MinProblem {
            objective,
            mu: 1.0,
            ell_f: 1.0,
            constraints,
            x0,
            rap: None,
        }
    }

    #[test]
    fn step_sizes() {
        assert_eq!(step_constant(1, 1.0), 0.0);
        assert!((step_constant(100, 2.0) - 0.023_025_850_929_940_46).abs() < 1e-15);
        assert!((step_constant(2000, 5.0) - 7.600_902_459_542_082e-4).abs() < 1e-15);
        assert_eq!(step_varying(0, 1.0, 1.0), 1.0);
        assert!((step_varying(9, 2.0, 1.0) - 0.05).abs() < 1e-15);
        let (mu, ell) = (0.5, 4.0);
        assert!((step_varying(0, mu, ell / mu) - 1.0 / ell).abs() < 1e-15);
    }

    #[test]
    fn constant_horizon_validation() {
        assert!(matches!(
            validate_constant_horizon(1, 1.0),
            Err(Error::ScheduleInvalid(_))
        ));
        assert!(validate_constant_horizon(100, 20.0).is_ok());
        assert!(validate_constant_horizon(100, 30.0).is_err());
    }

    #[test]
    fn feasible_point_takes_gradient_step() {
        let g = vec![SmoothConstraint::Affine {
            normal: dvector![1.0, 0.0],
            offset: -10.0,
        }];
        let p = toy(dvector![0.0, 0.0], g);
        let x = dvector![1.0, 2.0];
        let out = cgm_min_step(&p, &x, 1.0, 0.25, DEFAULT_TOL).unwrap();
        assert_eq!(out.v, dvector![-1.0, -2.0]);
        assert_eq!(out.x_next, dvector![0.75, 1.5]);
        assert_eq!(out.qp_iterations, 0);
    }

    #[test]
    fn single_violated_halfspace_step() {
        // f = 1/2 |x|^2, g(x) = 1 - x1, violated at the origin.
        let g = vec![SmoothConstraint::Affine {
            normal: dvector![-1.0, 0.0],
            offset: 1.0,
        }];
        let p = toy(dvector![2.0, 0.0], g);
        let (alpha, eta) = (0.7, 0.5);
        let out = cgm_min_step(&p, &dvector![0.0, 0.0], alpha, eta, DEFAULT_TOL).unwrap();
        assert!((&out.v - dvector![alpha, 0.0]).amax() < 1e-14);
        assert!((&out.x_next - dvector![alpha * eta, 0.0]).amax() < 1e-14);
    }

    #[test]
    fn run_with_one_step_is_gradient_step() {
        let p = toy(dvector![1.0, 1.0], vec![]);
        let cfg = MinSolverConfig {
            alpha: 1.0,
            schedule: StepSchedule::Varying,
            horizon: 1,
            qp_tol: DEFAULT_TOL,
        };
        let trace = cgm_min_run(&p, &cfg, None).unwrap();
        assert_eq!(trace.horizon(), 1);
        // eta_0 = 1/(mu kappa) = 1, so x^1 = x0 - grad f(x0) = 0.
        assert_eq!(trace.final_x, dvector![0.0, 0.0]);
        let cfg = MinSolverConfig {
            schedule: StepSchedule::Constant,
            ..cfg
        };
        assert!(matches!(
            cgm_min_run(&p, &cfg, None),
            Err(Error::ScheduleInvalid(_))
        ));
    }

    #[test]
    fn rejects_alpha_above_mu() {
        let p = toy(dvector![1.0, 1.0], vec![]);
        let cfg = MinSolverConfig {
            alpha: 1.5,
            schedule: StepSchedule::Varying,
            horizon: 5,
            qp_tol: DEFAULT_TOL,
        };
        assert!(matches!(cgm_min_run(&p, &cfg, None), Err(Error::InvalidConfig(_))));
    }
}
