//! Constrained gradient method for strongly monotone variational inequalities (CGM-VI).
//!
//! Compared with CGM-Min, the constraint list is extended by a ball around the
//! start point,
//!
//! ```text
//! g_{m+1}(x) = ||x - x0||^2 - (delta / ell_F^2) (||F(x0)||^2 + B),
//! ```
//!
//! `alpha` is fixed to `mu` and the step is `eta_t = 1 / (mu (t + 16 kappa^2))`.
//! The iterates are averaged with weights `t + 16 kappa^2 - 1`.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problems::{max_constraint, polytope_for, violated_set, SmoothConstraint, VIProblem};
use crate::qp::{project_velocity, DEFAULT_TOL};

/// Smallest admissible `delta = max{1, D^2 ell_F^2 / (||F(x0)||^2 + B)}`.
pub fn delta_default(norm_fx0_sq: f64, relaxed_offset: f64, diameter: f64, ell_f: f64) -> Result<f64> {
    let scale = norm_fx0_sq + relaxed_offset;
    if !(scale > 0.0) {
        return Err(Error::DegenerateStart);
    }
    Ok(f64::max(1.0, diameter * diameter * ell_f * ell_f / scale))
}

pub fn step_vi(t: usize, mu: f64, kappa: f64) -> f64 {
    1.0 / (mu * (t as f64 + 16.0 * kappa * kappa))
}

/// Ergodic weight of iterate `t`.
pub fn ergodic_weight(t: usize, kappa: f64) -> f64 {
    t as f64 + 16.0 * kappa * kappa - 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxConstraint {
    pub center: DVector<f64>,
    pub radius_sq: f64,
}

impl AuxConstraint {
    pub fn new(problem: &VIProblem, delta: f64) -> Result<Self> {
        let scale = problem.operator.apply(&problem.x0).norm_squared() + problem.relaxed_offset;
        let radius_sq = delta / (problem.ell_f * problem.ell_f) * scale;
        if !(radius_sq > 0.0) {
            return Err(Error::DegenerateStart);
        }
        Ok(Self {
            center: problem.x0.clone(),
            radius_sq,
        })
    }

    pub fn to_constraint(&self) -> SmoothConstraint {
        SmoothConstraint::Ball {
            center: self.center.clone(),
            radius_sq: self.radius_sq,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VISolverConfig {
    pub delta: f64,
    pub horizon: usize,
    pub qp_tol: f64,
}

impl VISolverConfig {
    /// Tightest admissible `delta` for `problem`.
    pub fn for_problem(problem: &VIProblem, horizon: usize) -> Result<Self> {
        let norm_sq = problem.operator.apply(&problem.x0).norm_squared();
        Ok(Self {
            delta: delta_default(norm_sq, problem.relaxed_offset, problem.diameter, problem.ell_f)?,
            horizon,
            qp_tol: DEFAULT_TOL,
        })
    }

    pub fn validate(&self, problem: &VIProblem) -> Result<()> {
        let norm_sq = problem.operator.apply(&problem.x0).norm_squared();
        let minimum = delta_default(norm_sq, problem.relaxed_offset, problem.diameter, problem.ell_f)?;
        if !(self.delta >= minimum) {
            return Err(Error::InvalidConfig(format!(
                "delta = {} is below the admissible minimum {minimum}",
                self.delta
            )));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.qp_tol > 0.0) {
            return Err(Error::InvalidConfig("qp_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VIIterate {
    pub t: usize,
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub eta: f64,
    /// `max(0, max_i g_i(x^t))` over the original and auxiliary constraints.
    pub max_violation: f64,
    pub dist_x0: f64,
    pub v_norm: f64,
    pub violated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VITrace {
    pub config: VISolverConfig,
    pub iterates: Vec<VIIterate>,
    pub final_x: DVector<f64>,
    pub final_violation: f64,
    /// Weighted average of `x^0..x^{T-1}`.
    pub ergodic: DVector<f64>,
    pub kappa: f64,
    pub aux: AuxConstraint,
    /// `||F(x0)||^2`
    pub fx0_norm_sq: f64,
    pub wall_ms: Vec<f64>,
}

impl VITrace {
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
}

/// Original constraints followed by the auxiliary ball.
pub fn extended_constraints(problem: &VIProblem, aux: &AuxConstraint) -> Vec<SmoothConstraint> {
    let mut constraints = problem.constraints.clone();
    constraints.push(aux.to_constraint());
    constraints
}

pub fn cgm_vi_run(problem: &VIProblem, config: &VISolverConfig) -> Result<VITrace> {
    config.validate(problem)?;
    let mu = problem.mu;
    let kappa = problem.kappa();
    let aux = AuxConstraint::new(problem, config.delta)?;
    let constraints = extended_constraints(problem, &aux);
    let fx0_norm_sq = problem.operator.apply(&problem.x0).norm_squared();
    let start = Instant::now();

    let n = problem.dim();
    let mut weighted_sum = DVector::zeros(n);
    let mut weight_total = 0.0;
    let mut iterates = Vec::with_capacity(config.horizon);
    let mut wall_ms = Vec::with_capacity(config.horizon);
    let mut x = problem.x0.clone();

    for t in 0..config.horizon {
        let eta = step_vi(t, mu, kappa);
        let fx = problem.operator.apply(&x);
        let violated = violated_set(&constraints, &x);
        let v = if violated.is_empty() {
            -fx
        } else {
            let polytope = polytope_for(&constraints, &x, &violated, mu)
                .map_err(|source| Error::Subproblem { iteration: t, source })?;
            project_velocity(&fx, &polytope, config.qp_tol)
                .map_err(|source| Error::Subproblem { iteration: t, source })?
                .v
        };
        let w = ergodic_weight(t, kappa);
        weighted_sum.axpy(w, &x, 1.0);
        weight_total += w;
        let x_next = &x + &v * eta;
        wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        iterates.push(VIIterate {
            t,
            max_violation: max_constraint(&constraints, &x).max(0.0),
            dist_x0: (&x - &problem.x0).norm(),
            v_norm: v.norm(),
            violated: violated.len(),
            eta,
            v,
            x,
        });
        x = x_next;
    }

    Ok(VITrace {
        config: config.clone(),
        iterates,
        final_violation: max_constraint(&constraints, &x).max(0.0),
        final_x: x,
        ergodic: weighted_sum / weight_total,
        kappa,
        aux,
        fx0_norm_sq,
        wall_ms,
    })
}

/// Weighted average of the first `horizon` iterates of `trace`.
pub fn ergodic_average(trace: &VITrace, horizon: usize) -> Result<DVector<f64>> {
    if horizon == 0 || horizon > trace.iterates.len() {
        return Err(Error::InvalidConfig(format!(
            "ergodic horizon {horizon} outside 1..={}",
            trace.iterates.len()
        )));
    }
    let n = trace.iterates[0].x.len();
    let mut sum = DVector::zeros(n);
    let mut total = 0.0;
    for it in &trace.iterates[..horizon] {
        let w = ergodic_weight(it.t, trace.kappa);
        sum.axpy(w, &it.x, 1.0);
        total += w;
    }
    Ok(sum / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::hbg_instantiate;
    use nalgebra::dvector;

    #[test]
    fn delta_examples() {
        assert_eq!(delta_default(1e9, 0.0, 2.0, 1.0).unwrap(), 1.0);
        assert_eq!(delta_default(0.3, 0.0, 0.0, 1.0).unwrap(), 1.0);
        assert!((delta_default(0.1, 0.0, 2.0, 2.6f64.sqrt()).unwrap() - 104.0).abs() < 1e-9);
        assert!(matches!(delta_default(0.0, 0.0, 2.0, 1.0), Err(Error::DegenerateStart)));
    }

    #[test]
    fn step_examples() {
        assert_eq!(step_vi(0, 1.0, 1.0), 1.0 / 16.0);
        let kappa = 2.6f64.sqrt() / 1.6;
        assert!((step_vi(0, 1.6, kappa) - 1.0 / (1.6 * 16.25)).abs() < 1e-15);
        assert!((step_vi(0, 1.6, kappa) - 0.03846).abs() < 1e-5);
        let (mu, ell) = (1.6, 2.6f64.sqrt());
        for t in 0..50 {
            let lhs = step_vi(t, mu, ell / mu) * 16.0 * ell * ell;
            assert!(lhs <= mu * (1.0 + 1e-15));
            if t > 0 {
                assert!(lhs < mu);
            }
        }
    }

    #[test]
    fn aux_ball_is_inactive_at_start() {
        let p = hbg_instantiate(10, 0.8, 42).unwrap();
        let cfg = VISolverConfig::for_problem(&p, 5).unwrap();
        let aux = AuxConstraint::new(&p, cfg.delta).unwrap();
        assert!(aux.radius_sq > 0.0);
        assert_eq!(aux.to_constraint().value(&p.x0), -aux.radius_sq);
    }

    #[test]
    fn ergodic_examples() {
        let p = hbg_instantiate(4, 0.8, 1).unwrap();
        let cfg = VISolverConfig::for_problem(&p, 2).unwrap();
        let mut trace = cgm_vi_run(&p, &cfg).unwrap();
        assert_eq!(ergodic_average(&trace, 1).unwrap(), p.x0);

        trace.kappa = 1.0;
        let (x0, x1) = (trace.iterates[0].x.clone(), trace.iterates[1].x.clone());
        let expected = (&x0 * 15.0 + &x1 * 16.0) / 31.0;
        assert!((ergodic_average(&trace, 2).unwrap() - expected).amax() < 1e-15);

        for it in &mut trace.iterates {
            it.x = dvector![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        }
        let avg = ergodic_average(&trace, 2).unwrap();
        assert!((avg - &trace.iterates[0].x).amax() < 1e-15);
        assert!(ergodic_average(&trace, 3).is_err());
        assert!(ergodic_average(&trace, 0).is_err());
    }

    #[test]
    fn weights_sum_closed_form() {
        let kappa = 1.3;
        for horizon in [1usize, 2, 10, 257] {
            let total: f64 = (0..horizon).map(|t| ergodic_weight(t, kappa)).sum();
            let t = horizon as f64;
            let closed = t * (t + 32.0 * kappa * kappa - 3.0) / 2.0;
            assert!((total - closed).abs() < 1e-9 * closed);
        }
    }

    #[test]
    fn rejects_small_delta() {
        let p = hbg_instantiate(5, 0.5, 3).unwrap();
        let mut cfg = VISolverConfig::for_problem(&p, 3).unwrap();
        cfg.delta = 0.5;
        assert!(matches!(cgm_vi_run(&p, &cfg), Err(Error::InvalidConfig(_))));
    }
}
