//! Constrained problem definitions and the two benchmark families:
//! the resource allocation problem (RAP) and the high-dimensional bilinear
//! game (HBG).

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::qp::{HalfspaceRow, QpError, VelocityPolytope};

/// Tolerance used when checking that a starting point is feasible.
pub const START_FEASIBILITY_TOL: f64 = 1e-12;

/// Differentiable objective `f`.
pub trait Objective: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// Operator `F` of a variational inequality.
pub trait Operator: Send + Sync {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// User-supplied constraint oracle.
pub trait ConstraintOracle: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Lipschitz constant of the gradient.
    fn smoothness(&self) -> f64;
}

/// A convex, smooth constraint `g(x) <= 0`.
#[derive(Clone)]
pub enum SmoothConstraint {
    /// `g(x) = <normal, x> + offset`
    Affine { normal: DVector<f64>, offset: f64 },
    /// `g(x) = -x[index]`
    NonNegative { index: usize, dim: usize },
    /// `g(x) = x^T Q x + offset` with `Q` symmetric positive semidefinite.
    Quadratic {
        matrix: DMatrix<f64>,
        offset: f64,
        smoothness: f64,
    },
    /// `g(x) = ||x - center||^2 - radius_sq`
    Ball {
        center: DVector<f64>,
        radius_sq: f64,
    },
    Custom(Arc<dyn ConstraintOracle>),
}

impl fmt::Debug for SmoothConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Affine { offset, normal } => f
                .debug_struct("Affine")
                .field("dim", &normal.len())
                .field("offset", offset)
                .finish(),
            Self::NonNegative { index, .. } => f.debug_struct("NonNegative").field("index", index).finish(),
            Self::Quadratic { offset, smoothness, .. } => f
                .debug_struct("Quadratic")
                .field("offset", offset)
                .field("smoothness", smoothness)
                .finish(),
            Self::Ball { radius_sq, .. } => f.debug_struct("Ball").field("radius_sq", radius_sq).finish(),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl SmoothConstraint {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::Affine { normal, offset } => normal.dot(x) + offset,
            Self::NonNegative { index, .. } => -x[*index],
            Self::Quadratic { matrix, offset, .. } => quadratic_form(matrix, x) + offset,
            Self::Ball { center, radius_sq } => (x - center).norm_squared() - radius_sq,
            Self::Custom(c) => c.value(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Affine { normal, .. } => normal.clone(),
            Self::NonNegative { index, dim } => {
                let mut g = DVector::zeros(*dim);
                g[*index] = -1.0;
                g
            }
            Self::Quadratic { matrix, .. } => (matrix * x) * 2.0,
            Self::Ball { center, .. } => (x - center) * 2.0,
            Self::Custom(c) => c.gradient(x),
        }
    }

    /// `||grad g(x)||` without materializing sparse gradients.
    pub fn gradient_norm(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::Affine { normal, .. } => normal.norm(),
            Self::NonNegative { .. } => 1.0,
            Self::Ball { center, .. } => 2.0 * (x - center).norm(),
            _ => self.gradient(x).norm(),
        }
    }

    /// Lipschitz constant of the gradient (0 for affine constraints).
    pub fn smoothness(&self) -> f64 {
        match self {
            Self::Affine { .. } | Self::NonNegative { .. } => 0.0,
            Self::Quadratic { smoothness, .. } => *smoothness,
            Self::Ball { .. } => 2.0,
            Self::Custom(c) => c.smoothness(),
        }
    }
}

/// `x^T M x` accumulated in a fixed order so repeated evaluation is bit-stable.
fn quadratic_form(matrix: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(matrix * x))
}

/// `f(x) = 1/2 x^T H x + <linear, x>`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl Objective for QuadraticObjective {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * quadratic_form(&self.hessian, x) + self.linear.dot(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.hessian * x + &self.linear
    }
}

/// `F(x) = A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineOperator {
    pub matrix: DMatrix<f64>,
    pub shift: DVector<f64>,
}

impl Operator for AffineOperator {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.shift
    }
}

/// HBG operator `F(x) = M x` with
/// `M = [[2 beta I, (1 - beta) I], [-(1 - beta) I, 2 beta I]]`, applied blockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HbgOperator {
    pub beta: f64,
    pub d: usize,
}

impl HbgOperator {
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.d;
        DMatrix::from_fn(2 * d, 2 * d, |i, j| {
            let (bi, bj) = (i / d, j / d);
            if i % d != j % d {
                0.0
            } else if bi == bj {
                2.0 * self.beta
            } else if bi == 0 {
                1.0 - self.beta
            } else {
                -(1.0 - self.beta)
            }
        })
    }
}

impl Operator for HbgOperator {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.d;
        let (b2, off) = (2.0 * self.beta, 1.0 - self.beta);
        DVector::from_fn(2 * d, |i, _| {
            if i < d {
                b2 * x[i] + off * x[i + d]
            } else {
                -off * x[i - d] + b2 * x[i]
            }
        })
    }
}

/// `F(x) = mu x + height * tanh(x / width)` applied componentwise.
///
/// Strongly monotone with modulus `mu`, continuous, but with gradient as steep
/// as `height / width`; it satisfies the relaxed Lipschitz bound with
/// `ell_F^2 = 2 mu^2` and `B = 8 n height^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteepTanhOperator {
    pub mu: f64,
    pub height: f64,
    pub width: f64,
}

impl SteepTanhOperator {
    pub fn relaxed_constants(&self, dim: usize) -> (f64, f64) {
        (
            2f64.sqrt() * self.mu,
            8.0 * dim as f64 * self.height * self.height,
        )
    }
}

impl Operator for SteepTanhOperator {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        x.map(|xi| self.mu * xi + self.height * (xi / self.width).tanh())
    }
}

/// Data of a resource allocation instance
/// `min 1/2 x^T Sigma x + a^T x  s.t. x >= 0, 1^T x = 1, r^T x <= r_max, x^T E x <= e_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct RapData {
    pub sigma: DMatrix<f64>,
    pub a: DVector<f64>,
    pub r: DVector<f64>,
    pub e: DMatrix<f64>,
    pub r_max: f64,
    pub e_max: f64,
}

impl RapData {
    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * quadratic_form(&self.sigma, x) + self.a.dot(x)
    }
}

/// Strongly convex minimization over `{x : g_i(x) <= 0}`.
#[derive(Clone)]
pub struct MinProblem {
    pub objective: Arc<dyn Objective>,
    pub mu: f64,
    pub ell_f: f64,
    pub constraints: Vec<SmoothConstraint>,
    pub x0: DVector<f64>,
    pub rap: Option<RapData>,
}

impl fmt::Debug for MinProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MinProblem")
            .field("dim", &self.dim())
            .field("mu", &self.mu)
            .field("ell_f", &self.ell_f)
            .field("constraints", &self.constraints.len())
            .finish()
    }
}

impl MinProblem {
    pub fn new(
        objective: Arc<dyn Objective>,
        mu: f64,
        ell_f: f64,
        constraints: Vec<SmoothConstraint>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        if !(mu > 0.0) || !(ell_f >= mu) {
            return Err(Error::InvalidProblem(format!(
                "need 0 < mu <= ell_f, got mu = {mu}, ell_f = {ell_f}"
            )));
        }
        let worst = max_constraint(&constraints, &x0);
        if worst > START_FEASIBILITY_TOL {
            return Err(Error::InvalidProblem(format!(
                "x0 violates a constraint by {worst:e}"
            )));
        }
        Ok(Self {
            objective,
            mu,
            ell_f,
            constraints,
            x0,
            rap: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn kappa(&self) -> f64 {
        self.ell_f / self.mu
    }

    /// Largest constraint smoothness constant.
    pub fn ell_g(&self) -> f64 {
        max_smoothness(&self.constraints)
    }
}

/// Strongly monotone VI over `{x : g_i(x) <= 0}`.
#[derive(Clone)]
pub struct VIProblem {
    pub operator: Arc<dyn Operator>,
    pub mu: f64,
    pub ell_f: f64,
    /// Offset `B` of the relaxed Lipschitz condition.
    pub relaxed_offset: f64,
    pub constraints: Vec<SmoothConstraint>,
    pub x0: DVector<f64>,
    pub diameter: f64,
    /// Index ranges of unit-simplex blocks when the feasible set is a product of simplices.
    pub simplex_blocks: Vec<Range<usize>>,
    /// Known solution, when available analytically.
    pub solution: Option<DVector<f64>>,
    pub hbg: Option<HbgOperator>,
}

impl fmt::Debug for VIProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VIProblem")
            .field("dim", &self.dim())
            .field("mu", &self.mu)
            .field("ell_f", &self.ell_f)
            .field("relaxed_offset", &self.relaxed_offset)
            .field("constraints", &self.constraints.len())
            .field("diameter", &self.diameter)
            .finish()
    }
}

impl VIProblem {
    pub fn new(
        operator: Arc<dyn Operator>,
        mu: f64,
        ell_f: f64,
        relaxed_offset: f64,
        constraints: Vec<SmoothConstraint>,
        x0: DVector<f64>,
        diameter: f64,
    ) -> Result<Self> {
        if !(mu > 0.0) || !(ell_f >= mu) || !(relaxed_offset >= 0.0) || !(diameter >= 0.0) {
            return Err(Error::InvalidProblem(format!(
                "need 0 < mu <= ell_F, B >= 0, D >= 0; got mu = {mu}, ell_F = {ell_f}, \
                 B = {relaxed_offset}, D = {diameter}"
            )));
        }
        let worst = max_constraint(&constraints, &x0);
        if worst > START_FEASIBILITY_TOL {
            return Err(Error::InvalidProblem(format!(
                "x0 violates a constraint by {worst:e}"
            )));
        }
        Ok(Self {
            operator,
            mu,
            ell_f,
            relaxed_offset,
            constraints,
            x0,
            diameter,
            simplex_blocks: Vec::new(),
            solution: None,
            hbg: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn kappa(&self) -> f64 {
        self.ell_f / self.mu
    }

    pub fn ell_g(&self) -> f64 {
        max_smoothness(&self.constraints)
    }
}

fn max_smoothness(constraints: &[SmoothConstraint]) -> f64 {
    constraints.iter().map(|c| c.smoothness()).fold(0.0, f64::max)
}

/// `max_i g_i(x)`, or `-inf` without constraints.
pub fn max_constraint(constraints: &[SmoothConstraint], x: &DVector<f64>) -> f64 {
    constraints
        .iter()
        .map(|g| g.value(x))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Indices (with values) of constraints strictly violated at `x`, in index order.
pub fn violated_set(constraints: &[SmoothConstraint], x: &DVector<f64>) -> Vec<(usize, f64)> {
    constraints
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let value = g.value(x);
            (value > 0.0).then_some((i, value))
        })
        .collect()
}

/// Velocity polytope rows `<grad g_i(x), v> <= -alpha g_i(x)` for the given violated set.
pub fn polytope_for(
    constraints: &[SmoothConstraint],
    x: &DVector<f64>,
    violated: &[(usize, f64)],
    alpha: f64,
) -> std::result::Result<VelocityPolytope, QpError> {
    let mut polytope = VelocityPolytope::new(x.len());
    for &(i, value) in violated {
        polytope.push(HalfspaceRow::new(constraints[i].gradient(x), -alpha * value)?)?;
    }
    Ok(polytope)
}

pub fn build_polytope(
    constraints: &[SmoothConstraint],
    x: &DVector<f64>,
    alpha: f64,
) -> std::result::Result<VelocityPolytope, QpError> {
    if !(alpha > 0.0) {
        return Err(QpError::InvalidInput(format!("alpha = {alpha} must be positive")));
    }
    polytope_for(constraints, x, &violated_set(constraints, x), alpha)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let entries: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &entries)
}

/// Columns of the Gaussian factors used for `Sigma` and `E`.
const RAP_FACTOR_RANK: usize = 10;

/// Seeded RAP instance with `d + 4` constraints and start `x0 = 1/d`.
///
/// Draw order from the seeded stream: `G1` (row-major), `G2`, `u`, then `r`.
pub fn rap_generate(d: usize, seed: u64) -> Result<MinProblem> {
    if d < 2 {
        return Err(Error::validation("d", format!("RAP needs d >= 2, got {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g1 = normal_matrix(&mut rng, d, RAP_FACTOR_RANK);
    let g2 = normal_matrix(&mut rng, d, RAP_FACTOR_RANK);
    let sigma = &g1 * g1.transpose() + DMatrix::identity(d, d) * 5.0;
    let e = &g2 * g2.transpose() + DMatrix::identity(d, d) * 10.0;

    let sigma_bar = sigma.diagonal().iter().map(|s| s.sqrt()).sum::<f64>() / d as f64;
    let a = DVector::from_fn(d, |_, _| sigma_bar * rng.random::<f64>());
    let r = DVector::from_fn(d, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z.abs() + 0.1
    });

    let x0 = DVector::from_element(d, 1.0 / d as f64);
    // Same evaluation path as the constraint values, so g(x0) = 0 exactly.
    let r_max = r.dot(&x0);
    let e_max = quadratic_form(&e, &x0);

    let sigma_eig = sigma.clone().symmetric_eigen().eigenvalues;
    let mu = sigma_eig.min();
    let ell_f = sigma_eig.max();
    let e_max_eig = e.clone().symmetric_eigen().eigenvalues.max();

    let ones = DVector::from_element(d, 1.0);
    let mut constraints: Vec<SmoothConstraint> = (0..d)
        .map(|index| SmoothConstraint::NonNegative { index, dim: d })
        .collect();
    constraints.push(SmoothConstraint::Affine {
        normal: ones.clone(),
        offset: -1.0,
    });
    constraints.push(SmoothConstraint::Affine {
        normal: -ones,
        offset: 1.0,
    });
    constraints.push(SmoothConstraint::Affine {
        normal: r.clone(),
        offset: -r_max,
    });
    constraints.push(SmoothConstraint::Quadratic {
        matrix: e.clone(),
        offset: -e_max,
        smoothness: 2.0 * e_max_eig,
    });

    let data = RapData {
        sigma: sigma.clone(),
        a: a.clone(),
        r,
        e,
        r_max,
        e_max,
    };
    let objective = Arc::new(QuadraticObjective {
        hessian: sigma,
        linear: a,
    });
    let mut problem = MinProblem::new(objective, mu, ell_f, constraints, x0)?;
    problem.rap = Some(data);
    Ok(problem)
}

/// Unconstrained minimizer `-Sigma^{-1} a` and its value `-1/2 a^T Sigma^{-1} a`.
pub fn rap_unconstrained_min(data: &RapData) -> Result<(DVector<f64>, f64)> {
    let chol = data
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularMatrix("Sigma is not positive definite".into()))?;
    let x = -chol.solve(&data.a);
    let f = 0.5 * data.a.dot(&x);
    Ok((x, f))
}

/// HBG on the product of two unit simplices in `R^d`, with a seeded random start.
pub fn hbg_instantiate(d: usize, beta: f64, seed: u64) -> Result<VIProblem> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::validation("beta", format!("need 0 < beta < 1, got {beta}")));
    }
    if d < 1 {
        return Err(Error::validation("d", "HBG needs d >= 1"));
    }
    let operator = HbgOperator { beta, d };
    let n = 2 * d;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stream = 0;
    let x0 = loop {
        let mut x: DVector<f64> = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let (s1, s2) = (x.rows(0, d).sum(), x.rows(d, d).sum());
        if s1 >= 1e-12 && s2 >= 1e-12 {
            x.rows_mut(0, d).unscale_mut(s1);
            x.rows_mut(d, d).unscale_mut(s2);
            if operator.apply(&x).norm_squared() > 0.0 {
                break x;
            }
        }
        // Degenerate draw: continue on the next substream.
        stream += 1;
        rng.set_stream(stream);
    };

    let mut constraints: Vec<SmoothConstraint> = (0..n)
        .map(|index| SmoothConstraint::NonNegative { index, dim: n })
        .collect();
    for block in [0..d, d..n] {
        let normal = DVector::from_fn(n, |i, _| if block.contains(&i) { 1.0 } else { 0.0 });
        constraints.push(SmoothConstraint::Affine {
            normal: normal.clone(),
            offset: -1.0,
        });
        constraints.push(SmoothConstraint::Affine {
            normal: -normal,
            offset: 1.0,
        });
    }

    let ell_f = (5.0 * beta * beta - 2.0 * beta + 1.0).sqrt();
    let mut problem = VIProblem::new(
        Arc::new(operator),
        2.0 * beta,
        ell_f,
        0.0,
        constraints,
        x0,
        2.0,
    )?;
    problem.simplex_blocks = vec![0..d, d..n];
    problem.solution = Some(DVector::from_element(n, 1.0 / d as f64));
    problem.hbg = Some(operator);
    Ok(problem)
}
