//! Projected gradient descent-ascent (GDA) and projected extragradient (EG)
//! on products of unit simplices.

use std::ops::Range;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problems::VIProblem;

/// Step size used for GDA by default.
pub const GDA_DEFAULT_STEP: f64 = 0.005;

/// Euclidean projection onto `{x >= 0, sum x = 1}` by sorting.
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let tau = simplex_threshold(y);
    y.iter().map(|&yi| (yi - tau).max(0.0)).collect()
}

/// The `tau` with `sum_i max(y_i - tau, 0) = 1`.
pub fn simplex_threshold(y: &[f64]) -> f64 {
    assert!(!y.is_empty(), "cannot project onto an empty simplex");
    let mut sorted = y.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = sorted[0] - 1.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if s - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    tau
}

/// Projection onto a product of simplices, one per block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplexProjector {
    pub blocks: Vec<Range<usize>>,
}

impl SimplexProjector {
    pub fn new(blocks: Vec<Range<usize>>) -> Self {
        Self { blocks }
    }

    pub fn for_problem(problem: &VIProblem) -> Result<Self> {
        let n = problem.dim();
        let blocks = &problem.simplex_blocks;
        let covered: usize = blocks.iter().map(|b| b.len()).sum();
        let tiles = blocks.windows(2).all(|w| w[0].end == w[1].start);
        if blocks.is_empty()
            || covered != n
            || !tiles
            || blocks[0].start != 0
            || blocks.iter().any(|b| b.is_empty())
        {
            return Err(Error::UnsupportedConstraintSet);
        }
        Ok(Self::new(blocks.clone()))
    }

    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = y.clone();
        for block in &self.blocks {
            let p = project_simplex(&y.as_slice()[block.clone()]);
            out.as_mut_slice()[block.clone()].copy_from_slice(&p);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Gda,
    Eg,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Gda => "gda",
            BaselineKind::Eg => "eg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTrace {
    pub kind: BaselineKind,
    pub eta: f64,
    /// Iterates `x^0..=x^T`.
    pub xs: Vec<DVector<f64>>,
    /// `||x^t - x*|| / ||x*||` for `t = 0..=T`.
    pub rel_err: Vec<f64>,
    /// Cumulative time after each step, `T` entries.
    pub wall_ms: Vec<f64>,
}

impl BaselineTrace {
    pub fn horizon(&self) -> usize {
        self.wall_ms.len()
    }
}

fn solution(problem: &VIProblem) -> Result<&DVector<f64>> {
    problem.solution.as_ref().ok_or_else(|| {
        Error::InvalidProblem("baselines report distance to a known solution".into())
    })
}

fn run<S>(problem: &VIProblem, kind: BaselineKind, eta: f64, horizon: usize, step: S) -> Result<BaselineTrace>
where
    S: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::validation("eta", format!("step size must be positive, got {eta}")));
    }
    let x_star = solution(problem)?;
    let scale = x_star.norm();
    let start = Instant::now();
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut rel_err = Vec::with_capacity(horizon + 1);
    let mut wall_ms = Vec::with_capacity(horizon);
    let mut x = problem.x0.clone();
    for _ in 0..horizon {
        let next = step(&x);
        wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        rel_err.push((&x - x_star).norm() / scale);
        xs.push(std::mem::replace(&mut x, next));
    }
    rel_err.push((&x - x_star).norm() / scale);
    xs.push(x);
    Ok(BaselineTrace {
        kind,
        eta,
        xs,
        rel_err,
        wall_ms,
    })
}

/// `x+ = P(x - eta F(x))`.
pub fn gda_run(problem: &VIProblem, eta: f64, horizon: usize) -> Result<BaselineTrace> {
    let proj = SimplexProjector::for_problem(problem)?;
    let op = &problem.operator;
    run(problem, BaselineKind::Gda, eta, horizon, |x| {
        proj.project(&(x - op.apply(x) * eta))
    })
}

/// `y = P(x - eta F(x))`, `x+ = P(x - eta F(y))`.
pub fn eg_run(problem: &VIProblem, eta: f64, horizon: usize) -> Result<BaselineTrace> {
    let proj = SimplexProjector::for_problem(problem)?;
    let op = &problem.operator;
    run(problem, BaselineKind::Eg, eta, horizon, |x| {
        let y = proj.project(&(x - op.apply(x) * eta));
        proj.project(&(x - op.apply(&y) * eta))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{hbg_instantiate, rap_generate};

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15)
    }

    #[test]
    fn simplex_examples() {
        assert!(close(&project_simplex(&[0.5, 0.5]), &[0.5, 0.5]));
        assert!(close(&project_simplex(&[2.0, 0.0]), &[1.0, 0.0]));
        assert!(close(&project_simplex(&[1.0, 1.0]), &[0.5, 0.5]));
        assert!(close(&project_simplex(&[0.0, 0.0, 0.0, 0.0]), &[0.25; 4]));
        assert!(close(&project_simplex(&[-3.0, 5.0, 0.2]), &[0.0, 1.0, 0.0]));
    }

    #[test]
    fn gda_one_step_d2() {
        // Bisection oracle for the block threshold.
        fn bisect(y: &[f64]) -> Vec<f64> {
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let s: f64 = y.iter().map(|v| (v - mid).max(0.0)).sum();
                if s > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            y.iter().map(|v| (v - hi).max(0.0)).collect()
        }
        let mut p = hbg_instantiate(2, 0.8, 5).unwrap();
        p.x0 = DVector::from_vec(vec![0.9, 0.1, 0.3, 0.7]);
        let trace = gda_run(&p, 0.3, 1).unwrap();
        let y = &p.x0 - p.operator.apply(&p.x0) * 0.3;
        let mut expected = bisect(&y.as_slice()[0..2]);
        expected.extend(bisect(&y.as_slice()[2..4]));
        assert!(trace.xs[1].iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn solution_is_fixed_point() {
        let mut p = hbg_instantiate(10, 0.8, 1).unwrap();
        p.x0 = p.solution.clone().unwrap();
        let ell = p.ell_f;
        for trace in [gda_run(&p, GDA_DEFAULT_STEP, 20).unwrap(), eg_run(&p, 1.0 / ell, 20).unwrap()] {
            assert!(trace.rel_err.iter().all(|&e| e < 1e-14), "{:?}", trace.kind);
        }
    }

    #[test]
    fn eg_distance_nonincreasing_after_burn_in() {
        let p = hbg_instantiate(50, 0.8, 42).unwrap();
        let trace = eg_run(&p, 1.0 / p.ell_f, 300).unwrap();
        for w in trace.rel_err[5..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
        assert!((1.0 / p.ell_f - 1.0 / 2.6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn iterates_stay_feasible() {
        let p = hbg_instantiate(20, 0.3, 9).unwrap();
        let trace = gda_run(&p, 0.05, 50).unwrap();
        for x in &trace.xs {
            assert!(x.iter().all(|&v| v >= 0.0));
            for b in &p.simplex_blocks {
                assert!((x.rows(b.start, b.len()).sum() - 1.0).abs() <= 1e-12);
            }
        }
        assert_eq!(trace.horizon(), 50);
        assert_eq!(trace.rel_err.len(), 51);
    }

    #[test]
    fn rejects_non_simplex_sets() {
        let rap = rap_generate(5, 1).unwrap();
        let vi = crate::problems::VIProblem::new(
            std::sync::Arc::new(crate::problems::AffineOperator {
                matrix: nalgebra::DMatrix::identity(5, 5),
                shift: DVector::zeros(5),
            }),
            1.0,
            1.0,
            0.0,
            rap.constraints.clone(),
            rap.x0.clone(),
            2.0,
        )
        .unwrap();
        assert!(matches!(gda_run(&vi, 0.1, 3), Err(Error::UnsupportedConstraintSet)));
        assert!(matches!(eg_run(&vi, 0.1, 3), Err(Error::UnsupportedConstraintSet)));
    }
}
