//! Constrained gradient methods (CGM) for strongly convex minimization and
//! strongly monotone variational inequalities with smooth functional
//! constraints.
//!
//! Each iteration projects the negative gradient (or operator value) onto the
//! velocity polytope of the currently violated constraints,
//!
//! ```text
//! V_alpha(x) = { v : alpha g_i(x) + <grad g_i(x), v> <= 0  for all i with g_i(x) > 0 },
//! ```
//!
//! and takes a step along the projection. Iterates may leave the feasible set;
//! the violation decays at a proven rate.
//!
//! ```
//! use cgm_core::{cgm_min_run, rap_generate, MinSolverConfig, StepSchedule};
//!
//! let problem = rap_generate(10, 42).unwrap();
//! let config = MinSolverConfig::for_problem(&problem, StepSchedule::Varying, 50);
//! let trace = cgm_min_run(&problem, &config, None).unwrap();
//! assert_eq!(trace.horizon(), 50);
//! ```
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cgm_min;
pub mod cgm_vi;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod problems;
pub mod qp;
pub mod reference;

pub use baselines::{eg_run, gda_run, project_simplex, BaselineTrace, SimplexProjector};
pub use cgm_min::{cgm_min_run, cgm_min_step, MinSolverConfig, MinTrace, StepSchedule};
pub use cgm_vi::{cgm_vi_run, ergodic_average, VISolverConfig, VITrace};
pub use error::{Error, Result};
pub use metrics::{certify_min, certify_vi, hbg_gap_closed_form, BoundsReport, Certificate};
pub use problems::{
    hbg_instantiate, rap_generate, rap_unconstrained_min, MinProblem, SmoothConstraint, VIProblem,
};
pub use qp::{project_velocity, HalfspaceRow, ProjectionResult, QpError, VelocityPolytope};
pub use reference::{solve_rap_reference, BarrierOptions, KktCertificate, Reference};
