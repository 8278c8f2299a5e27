//! Least-distance projection onto a velocity polytope.
//!
//! Every CGM iteration solves
//!
//! ```text
//! min_v ||v + c||^2   s.t.   <a_i, v> <= b_i   for each violated constraint i
//! ```
//!
//! where `c` is the gradient (or operator value) at the current iterate. The
//! row count is the number of violated constraints, which is small, so a dual
//! active-set method (Goldfarb-Idnani with identity Hessian) identifies the
//! optimal active set exactly and returns `v` to near machine precision.
//!
//! [`brute_force_projection`] enumerates active sets and is only meant as a
//! test oracle for small instances.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default feasibility / KKT tolerance of [`project_velocity`].
pub const DEFAULT_TOL: f64 = 1e-10;

/// Rows whose normal is shorter than this are treated as constant rows.
pub const NORMAL_EPS: f64 = 1e-14;

/// Ridge added to the Gram matrix of active normals.
const RIDGE: f64 = 1e-12;

/// Relative threshold below which a row is linearly dependent on the active set.
const DEPENDENCE_EPS: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("velocity polytope is empty ({0})")]
    Infeasible(String),
    #[error("active-set solver stalled after {0} iterations")]
    MaxIterations(usize),
    #[error("projection KKT residual {residual:e} exceeds tolerance {tol:e}")]
    Inaccurate { residual: f64, tol: f64 },
    #[error("invalid subproblem data: {0}")]
    InvalidInput(String),
}

/// One linear inequality `<normal, v> <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceRow {
    normal: DVector<f64>,
    rhs: f64,
}

impl HalfspaceRow {
    /// Builds a row, rejecting non-finite data and rows that no `v` can satisfy
    /// (zero normal with negative right-hand side).
    pub fn new(normal: DVector<f64>, rhs: f64) -> Result<Self, QpError> {
        if !rhs.is_finite() || normal.iter().any(|a| !a.is_finite()) {
            return Err(QpError::InvalidInput("non-finite row".into()));
        }
        if normal.norm() < NORMAL_EPS && rhs < 0.0 {
            return Err(QpError::Infeasible(format!(
                "zero normal with rhs {rhs:e} < 0"
            )));
        }
        Ok(Self { normal, rhs })
    }

    pub fn normal(&self) -> &DVector<f64> {
        &self.normal
    }

    pub fn rhs(&self) -> f64 {
        self.rhs
    }

    /// `<normal, v> - rhs`; positive means the row is violated.
    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        self.normal.dot(v) - self.rhs
    }

    /// A row with (numerically) zero normal; always satisfied once constructed.
    pub fn is_vacuous(&self) -> bool {
        self.normal.norm() < NORMAL_EPS
    }
}

/// Intersection of half-spaces in `R^dim`. No rows means the whole space.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPolytope {
    dim: usize,
    rows: Vec<HalfspaceRow>,
}

impl VelocityPolytope {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: Vec<HalfspaceRow>) -> Result<Self, QpError> {
        let mut polytope = Self::new(dim);
        for row in rows {
            polytope.push(row)?;
        }
        Ok(polytope)
    }

    pub fn push(&mut self, row: HalfspaceRow) -> Result<(), QpError> {
        if row.normal.len() != self.dim {
            return Err(QpError::InvalidInput(format!(
                "row of dimension {} in a polytope of dimension {}",
                row.normal.len(),
                self.dim
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[HalfspaceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest row violation at `v` (non-positive when `v` is inside).
    pub fn max_violation(&self, v: &DVector<f64>) -> f64 {
        self.rows
            .iter()
            .map(|r| r.violation(v))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.rows.iter().all(|r| r.violation(v) <= tol)
    }
}

/// Output of [`project_velocity`] together with its optimality certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub v: DVector<f64>,
    /// One multiplier per polytope row (vacuous rows get 0).
    pub dual: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Euclidean projection of `-target` onto `polytope`.
///
/// Returns the unique minimizer of `||v + target||^2` over the polytope along
/// with nonnegative multipliers satisfying `v + target + sum_i dual_i a_i = 0`.
pub fn project_velocity(
    target: &DVector<f64>,
    polytope: &VelocityPolytope,
    tol: f64,
) -> Result<ProjectionResult, QpError> {
    if !(tol > 0.0) {
        return Err(QpError::InvalidInput(format!("tolerance {tol} must be positive")));
    }
    if target.len() != polytope.dim() {
        return Err(QpError::InvalidInput(format!(
            "target of dimension {} for a polytope of dimension {}",
            target.len(),
            polytope.dim()
        )));
    }
    if target.iter().any(|c| !c.is_finite()) {
        return Err(QpError::InvalidInput("non-finite target".into()));
    }

    let rows = polytope.rows();
    let m = rows.len();
    let z = -target;
    let mut dual = vec![0.0; m];

    // -c already feasible: the projection is -c itself.
    if polytope.contains(&z, tol) {
        return Ok(ProjectionResult {
            v: z,
            dual,
            kkt_residual: 0.0,
            iterations: 0,
        });
    }

    let candidates: Vec<usize> = (0..m).filter(|&i| !rows[i].is_vacuous()).collect();
    let max_iterations = 50 * (m + 1);
    let mut iterations = 0;
    let mut active: Vec<usize> = Vec::new();
    let mut v = z.clone();

    loop {
        // Most violated inactive row, measured in distance units.
        let mut entering = None;
        let mut worst = 0.0;
        for &i in &candidates {
            if active.contains(&i) {
                continue;
            }
            let s = rows[i].violation(&v);
            if s > tol {
                let scaled = s / rows[i].normal.norm();
                if scaled > worst {
                    worst = scaled;
                    entering = Some(i);
                }
            }
        }
        let Some(p) = entering else { break };

        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Err(QpError::MaxIterations(max_iterations));
            }
            let a_p = &rows[p].normal;
            let (r, d) = split_against_active(rows, &active, a_p)?;
            let dd = d.norm_squared();
            let slack = rows[p].violation(&v).max(0.0);

            let full_step = (dd > DEPENDENCE_EPS * a_p.norm_squared()).then(|| slack / dd);
            let mut partial_step: Option<(f64, usize)> = None;
            for (k, &j) in active.iter().enumerate() {
                if r[k] > 0.0 {
                    let t = dual[j] / r[k];
                    if partial_step.is_none_or(|(best, _)| t < best) {
                        partial_step = Some((t, k));
                    }
                }
            }

            let (step, drop) = match (full_step, partial_step) {
                (None, None) => {
                    return Err(QpError::Infeasible(format!(
                        "row {p} cannot be satisfied together with the active rows"
                    )))
                }
                (Some(t), None) => (t, None),
                (None, Some((t, k))) => (t, Some(k)),
                (Some(t_full), Some((t_part, k))) => {
                    if t_full <= t_part {
                        (t_full, None)
                    } else {
                        (t_part, Some(k))
                    }
                }
            };

            v.axpy(-step, &d, 1.0);
            for (k, &j) in active.iter().enumerate() {
                dual[j] -= step * r[k];
            }
            dual[p] += step;

            match drop {
                None => {
                    active.push(p);
                    break;
                }
                Some(k) => {
                    let j = active.remove(k);
                    dual[j] = 0.0;
                }
            }
        }
    }

    let mut result = ProjectionResult {
        v,
        dual,
        kkt_residual: 0.0,
        iterations,
    };
    result.kkt_residual = kkt_residual_qp(&result, target, polytope);

    if let Some(polished) = polish(target, polytope, &active, iterations, tol) {
        if polished.kkt_residual <= result.kkt_residual {
            result = polished;
        }
    }

    let scale = 1.0 + target.amax() + rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    if result.kkt_residual > tol * scale {
        return Err(QpError::Inaccurate {
            residual: result.kkt_residual,
            tol: tol * scale,
        });
    }
    Ok(result)
}

/// Splits `a` into `N r + d` with `d` orthogonal to the active normals `N`.
fn split_against_active(
    rows: &[HalfspaceRow],
    active: &[usize],
    a: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), QpError> {
    if active.is_empty() {
        return Ok((DVector::zeros(0), a.clone()));
    }
    let normals = active_normals(rows, active);
    let r = solve_gram(&normals, &normals.tr_mul(a))?;
    let d = a - &normals * &r;
    Ok((r, d))
}

fn active_normals(rows: &[HalfspaceRow], active: &[usize]) -> DMatrix<f64> {
    let n = rows[active[0]].normal.len();
    DMatrix::from_fn(n, active.len(), |i, k| rows[active[k]].normal[i])
}

fn solve_gram(normals: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, QpError> {
    let k = normals.ncols();
    let gram = normals.tr_mul(normals) + DMatrix::identity(k, k) * RIDGE;
    let chol = gram
        .cholesky()
        .ok_or_else(|| QpError::InvalidInput("active normals are not independent".into()))?;
    Ok(chol.solve(rhs))
}

/// Re-solves the equality system of the final active set directly.
fn polish(
    target: &DVector<f64>,
    polytope: &VelocityPolytope,
    active: &[usize],
    iterations: usize,
    tol: f64,
) -> Option<ProjectionResult> {
    if active.is_empty() {
        return None;
    }
    let rows = polytope.rows();
    let z = -target;
    let normals = active_normals(rows, active);
    let b = DVector::from_iterator(active.len(), active.iter().map(|&i| rows[i].rhs));
    let lambda = solve_gram(&normals, &(normals.tr_mul(&z) - b)).ok()?;
    if lambda.iter().any(|&l| l < -tol) {
        return None;
    }
    let v = &z - &normals * &lambda;
    if !polytope.contains(&v, tol) {
        return None;
    }
    let mut dual = vec![0.0; rows.len()];
    for (k, &i) in active.iter().enumerate() {
        dual[i] = lambda[k].max(0.0);
    }
    let mut result = ProjectionResult {
        v,
        dual,
        kkt_residual: 0.0,
        iterations,
    };
    result.kkt_residual = kkt_residual_qp(&result, target, polytope);
    Some(result)
}

/// Largest of: stationarity norm, positive primal violation, complementarity
/// magnitude and negative-multiplier magnitude.
pub fn kkt_residual_qp(
    result: &ProjectionResult,
    target: &DVector<f64>,
    polytope: &VelocityPolytope,
) -> f64 {
    assert_eq!(
        result.dual.len(),
        polytope.len(),
        "one multiplier per polytope row"
    );
    let mut stationarity = &result.v + target;
    let mut residual: f64 = 0.0;
    for (row, &lambda) in polytope.rows().iter().zip(&result.dual) {
        stationarity.axpy(lambda, &row.normal, 1.0);
        let s = row.violation(&result.v);
        residual = residual.max(s.max(0.0));
        residual = residual.max((lambda * s).abs());
        residual = residual.max((-lambda).max(0.0));
    }
    residual.max(stationarity.norm())
}

/// Exhaustive active-set enumeration; exponential in the row count.
///
/// Each subset is solved as an equality-constrained least-distance problem
/// with a pseudo-inverse; candidates that are primal feasible with
/// nonnegative multipliers are compared by objective, earlier subsets in
/// lexicographic order winning ties.
pub fn brute_force_projection(
    target: &DVector<f64>,
    polytope: &VelocityPolytope,
) -> Result<DVector<f64>, QpError> {
    const FEAS: f64 = 1e-9;
    let rows = polytope.rows();
    let z = -target;
    let mut best: Option<(f64, DVector<f64>)> = None;

    let mut subsets = Vec::new();
    lexicographic_subsets(rows.len(), 0, &mut Vec::new(), &mut subsets);

    for subset in subsets {
        let candidate = if subset.is_empty() {
            Some(z.clone())
        } else {
            let a = DMatrix::from_fn(subset.len(), polytope.dim(), |k, j| {
                rows[subset[k]].normal[j]
            });
            let b = DVector::from_iterator(subset.len(), subset.iter().map(|&i| rows[i].rhs));
            let gram = &a * a.transpose();
            let svd = gram.svd(true, true);
            svd.solve(&(&a * &z - &b), 1e-12).ok().and_then(|lambda| {
                if lambda.iter().any(|&l| l < -FEAS) {
                    return None;
                }
                let v = &z - a.transpose() * &lambda;
                let on_faces = subset
                    .iter()
                    .all(|&i| rows[i].violation(&v).abs() <= FEAS * (1.0 + rows[i].rhs.abs()));
                on_faces.then_some(v)
            })
        };
        let Some(v) = candidate else { continue };
        if !polytope.contains(&v, FEAS) {
            continue;
        }
        let objective = (&v - &z).norm_squared();
        match &best {
            Some((b, _)) if objective >= *b - 1e-14 * (1.0 + b) => {}
            _ => best = Some((objective, v)),
        }
    }
    best.map(|(_, v)| v)
        .ok_or_else(|| QpError::Infeasible("no active set yields a feasible point".into()))
}

fn lexicographic_subsets(m: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(current.clone());
    for i in start..m {
        current.push(i);
        lexicographic_subsets(m, i + 1, current, out);
        current.pop();
    }
}
