//! Log-barrier interior-point solver for the resource allocation QCQP, used
//! as ground truth for the function value residual.
//!
//! ```text
//! min  1/2 x^T Sigma x + a^T x
//! s.t. x >= 0,  1^T x = 1,  r^T x <= R_max,  x^T E x <= E_max
//! ```
//!
//! The equality is kept in the Newton system. A strictly feasible start is
//! found by a phase-I barrier on `(x, s)` minimizing `s` subject to
//! `g_i(x) <= s`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problems::RapData;

/// Optimal point and value of a constrained problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x: DVector<f64>,
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktCertificate {
    pub stationarity_norm: f64,
    pub max_primal_violation: f64,
    /// `max_i |lambda_i g_i(x)|`
    pub max_complementarity: f64,
    pub equality_residual: f64,
    /// `max(0, -min_i lambda_i)`
    pub dual_violation: f64,
}

impl KktCertificate {
    pub fn max_residual(&self) -> f64 {
        self.stationarity_norm
            .max(self.max_primal_violation)
            .max(self.max_complementarity)
            .max(self.equality_residual)
            .max(self.dual_violation)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

/// Multipliers ordered as `x_1 >= 0, ..., x_d >= 0`, budget, risk; `nu` for `1^T x = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktMultipliers {
    pub inequality: DVector<f64>,
    pub nu: f64,
}

/// Inequality values `g(x)` in multiplier order.
pub fn rap_inequalities(data: &RapData, x: &DVector<f64>) -> DVector<f64> {
    let d = data.dim();
    let mut g = DVector::zeros(d + 2);
    for i in 0..d {
        g[i] = -x[i];
    }
    g[d] = data.r.dot(x) - data.r_max;
    g[d + 1] = x.dot(&(&data.e * x)) - data.e_max;
    g
}

pub fn kkt_residual(data: &RapData, x: &DVector<f64>, multipliers: &KktMultipliers) -> KktCertificate {
    let d = data.dim();
    let lam = &multipliers.inequality;
    assert_eq!(lam.len(), d + 2, "one multiplier per inequality");
    let g = rap_inequalities(data, x);

    let mut stationarity = &data.sigma * x + &data.a;
    for i in 0..d {
        stationarity[i] -= lam[i];
    }
    stationarity += &data.r * lam[d];
    stationarity += (&data.e * x) * (2.0 * lam[d + 1]);
    stationarity.add_scalar_mut(multipliers.nu);

    KktCertificate {
        stationarity_norm: stationarity.norm(),
        max_primal_violation: g.max().max(0.0),
        max_complementarity: lam.iter().zip(g.iter()).map(|(l, gi)| (l * gi).abs()).fold(0.0, f64::max),
        equality_residual: (x.sum() - 1.0).abs(),
        dual_violation: (-lam.min()).max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierOptions {
    /// Barrier weight multiplier per outer iteration.
    pub factor: f64,
    /// Stop once `(#inequalities) / t <= tol`.
    pub tol: f64,
    pub t0: f64,
    /// Stop centering once `lambda^2 / 2 <= newton_tol`.
    pub newton_tol: f64,
    pub armijo: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            factor: 10.0,
            tol: 1e-10,
            t0: 1.0,
            newton_tol: 1e-12,
            armijo: 0.01,
            max_newton: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub reference: Reference,
    pub multipliers: KktMultipliers,
    pub certificate: KktCertificate,
    /// Objective value after each outer iteration.
    pub central_path: Vec<f64>,
    pub newton_steps: usize,
}

/// Barrier multipliers above this are treated as belonging to active constraints.
const ACTIVE_MULTIPLIER: f64 = 1e-6;

/// Squared Newton decrement below which a non-shrinking decrement counts as converged.
const STALL_DECREMENT: f64 = 1e-6;

/// `h(z) = c + <lin, z> + x^T Q x`, where `x` is the first `quad_dim` entries of `z`.
struct Ineq {
    lin: Vec<(usize, f64)>,
    quad: bool,
    c: f64,
}

struct BarrierProblem<'a> {
    n: usize,
    quad_dim: usize,
    /// Objective `1/2 x^T objective_q x + <objective_lin, z>`.
    objective_q: Option<&'a DMatrix<f64>>,
    objective_lin: DVector<f64>,
    ineq_q: &'a DMatrix<f64>,
    ineqs: Vec<Ineq>,
    /// Equality `<eq_row, z> = eq_rhs`.
    eq_row: DVector<f64>,
    eq_rhs: f64,
}

impl BarrierProblem<'_> {
    fn x_part<'z>(&self, z: &'z DVector<f64>) -> nalgebra::DVectorView<'z, f64> {
        z.rows(0, self.quad_dim)
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let lin = self.objective_lin.dot(z);
        match self.objective_q {
            Some(q) => {
                let x = self.x_part(z);
                lin + 0.5 * x.dot(&(q * x))
            }
            None => lin,
        }
    }

    fn ineq_values(&self, z: &DVector<f64>, qx: &DVector<f64>) -> Vec<f64> {
        let x = self.x_part(z);
        let xqx = x.dot(qx);
        self.ineqs
            .iter()
            .map(|h| {
                let lin: f64 = h.lin.iter().map(|&(k, a)| a * z[k]).sum();
                h.c + lin + if h.quad { xqx } else { 0.0 }
            })
            .collect()
    }

    fn strictly_feasible(&self, z: &DVector<f64>) -> bool {
        let qx = self.ineq_q * self.x_part(z);
        self.ineq_values(z, &qx).iter().all(|&h| h < 0.0)
    }

    /// `t f0(z) - sum log(-h_i(z))`, or `+inf` outside the domain.
    fn barrier_value(&self, t: f64, z: &DVector<f64>) -> f64 {
        let qx = self.ineq_q * self.x_part(z);
        let hs = self.ineq_values(z, &qx);
        if hs.iter().any(|&h| h >= 0.0) {
            return f64::INFINITY;
        }
        t * self.objective(z) - hs.iter().map(|h| (-h).ln()).sum::<f64>()
    }

    fn gradient_hessian(&self, t: f64, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (n, nq) = (self.n, self.quad_dim);
        let x = self.x_part(z).into_owned();
        let qx = self.ineq_q * &x;
        let hs = self.ineq_values(z, &qx);

        let mut grad = &self.objective_lin * t;
        let mut hess = DMatrix::zeros(n, n);
        if let Some(q) = self.objective_q {
            let gq = q * &x;
            for i in 0..nq {
                grad[i] += t * gq[i];
            }
            let mut block = hess.view_mut((0, 0), (nq, nq));
            block += q * t;
        }
        let mut dense = DVector::zeros(n);
        for (h, &value) in self.ineqs.iter().zip(&hs) {
            let inv = -1.0 / value;
            if h.quad {
                dense.fill(0.0);
                for &(k, a) in &h.lin {
                    dense[k] += a;
                }
                dense.rows_mut(0, nq).axpy(2.0, &qx, 1.0);
                grad.axpy(inv, &dense, 1.0);
                hess.ger(inv * inv, &dense, &dense, 1.0);
                let mut block = hess.view_mut((0, 0), (nq, nq));
                block += self.ineq_q * (2.0 * inv);
            } else {
                for &(k, a) in &h.lin {
                    grad[k] += inv * a;
                    for &(l, b) in &h.lin {
                        hess[(k, l)] += inv * inv * a * b;
                    }
                }
            }
        }
        (grad, hess)
    }

    /// Damped Newton on the barrier function restricted to the equality.
    fn center(&self, t: f64, z: &mut DVector<f64>, opts: &BarrierOptions) -> Result<usize> {
        let n = self.n;
        let mut previous = None;
        for step in 0..opts.max_newton {
            let (grad, hess) = self.gradient_hessian(t, z);
            let mut kkt = DMatrix::zeros(n + 1, n + 1);
            kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
            kkt.view_mut((0, n), (n, 1)).copy_from(&self.eq_row);
            kkt.view_mut((n, 0), (1, n)).copy_from(&self.eq_row.transpose());
            let mut rhs = DVector::zeros(n + 1);
            rhs.rows_mut(0, n).copy_from(&(-&grad));
            rhs[n] = self.eq_rhs - self.eq_row.dot(z);
            let sol = kkt
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::SingularMatrix("barrier Newton system".into()))?;
            let dz = sol.rows(0, n).into_owned();
            let decrement_sq = dz.dot(&(&hess * &dz)).max(0.0);
            // Deep in the quadratic region the decrement should collapse; if it
            // does not, it has hit the rounding floor of `t grad f0`.
            let stalled = decrement_sq < STALL_DECREMENT
                && previous.is_some_and(|p: f64| decrement_sq > 0.25 * p);
            if decrement_sq / 2.0 <= opts.newton_tol || stalled {
                return Ok(step);
            }
            previous = Some(decrement_sq);

            let mut s = 1.0;
            while !self.strictly_feasible(&(&*z + &dz * s)) {
                s *= 0.5;
                if s < 1e-30 {
                    return Err(Error::BarrierFailure("cannot stay inside the domain".into()));
                }
            }
            if decrement_sq.sqrt() >= 0.25 {
                let phi = self.barrier_value(t, z);
                let slope = grad.dot(&dz);
                while self.barrier_value(t, &(&*z + &dz * s)) > phi + opts.armijo * s * slope {
                    s *= 0.5;
                    if s < 1e-20 {
                        return Err(Error::BarrierFailure(format!(
                            "line search stalled at t = {t:e}, decrement^2 = {decrement_sq:e}"
                        )));
                    }
                }
            }
            z.axpy(s, &dz, 1.0);
        }
        Err(Error::BarrierFailure(format!(
            "Newton did not converge in {} steps at t = {t:e}",
            opts.max_newton
        )))
    }
}

fn rap_ineqs(d: usize, slack_index: Option<usize>, data: &RapData) -> Vec<Ineq> {
    let with_slack = |mut lin: Vec<(usize, f64)>| {
        if let Some(s) = slack_index {
            lin.push((s, -1.0));
        }
        lin
    };
    let mut ineqs: Vec<Ineq> = (0..d)
        .map(|i| Ineq {
            lin: with_slack(vec![(i, -1.0)]),
            quad: false,
            c: 0.0,
        })
        .collect();
    ineqs.push(Ineq {
        lin: with_slack(data.r.iter().copied().enumerate().collect()),
        quad: false,
        c: -data.r_max,
    });
    ineqs.push(Ineq {
        lin: with_slack(Vec::new()),
        quad: true,
        c: -data.e_max,
    });
    ineqs
}

/// Strictly feasible point of the RAP set with `1^T x = 1` exact up to rounding.
pub fn rap_strict_interior(data: &RapData, opts: &BarrierOptions) -> Result<DVector<f64>> {
    let d = data.dim();
    let n = d + 1;
    let mut objective_lin = DVector::zeros(n);
    objective_lin[d] = 1.0;
    let mut eq_row = DVector::from_element(n, 1.0);
    eq_row[d] = 0.0;
    let problem = BarrierProblem {
        n,
        quad_dim: d,
        objective_q: None,
        objective_lin,
        ineq_q: &data.e,
        ineqs: rap_ineqs(d, Some(d), data),
        eq_row,
        eq_rhs: 1.0,
    };

    let x0 = DVector::from_element(d, 1.0 / d as f64);
    let gmax = rap_inequalities(data, &x0).max();
    if gmax < 0.0 {
        return Ok(x0);
    }
    let mut z = x0.clone().insert_row(d, gmax + 1.0);
    let m = problem.ineqs.len() as f64;
    let mut t = opts.t0;
    loop {
        problem.center(t, &mut z, opts)?;
        let x = z.rows(0, d).into_owned();
        let gmax = rap_inequalities(data, &x).max();
        let gap = m / t;
        if gmax < 0.0 && gap <= gmax.abs() {
            return Ok(x);
        }
        if gap <= opts.tol {
            return Err(Error::StartInfeasible);
        }
        t *= opts.factor;
    }
}

/// Multipliers at a central point for barrier weight `t`.
///
/// Bounds use `1 / (t x_i)`, which is exact. For the budget and risk rows
/// `g(x)` is a difference of nearly equal numbers when active, so their
/// multipliers (with `nu`) are refit by least squares on the stationarity
/// equation instead.
fn recover_multipliers(data: &RapData, x: &DVector<f64>, t: f64) -> Result<KktMultipliers> {
    let d = data.dim();
    let g = rap_inequalities(data, x);
    let mut inequality = g.map(|gi| 1.0 / (t * -gi));
    let mut residual = &data.sigma * x + &data.a;
    for i in 0..d {
        residual[i] -= inequality[i];
    }

    let ex2 = (&data.e * x) * 2.0;
    let active: Vec<usize> = [d, d + 1]
        .into_iter()
        .filter(|&i| inequality[i] > ACTIVE_MULTIPLIER)
        .collect();
    for i in [d, d + 1] {
        if !active.contains(&i) {
            let column = if i == d { &data.r } else { &ex2 };
            residual.axpy(inequality[i], column, 1.0);
        }
    }
    let mut basis = DMatrix::from_element(d, active.len() + 1, 1.0);
    for (k, &i) in active.iter().enumerate() {
        basis.set_column(k, if i == d { &data.r } else { &ex2 });
    }
    let coeffs = basis
        .svd(true, true)
        .solve(&(-residual), 1e-14)
        .map_err(|e| Error::SingularMatrix(format!("multiplier fit: {e}")))?;
    for (k, &i) in active.iter().enumerate() {
        inequality[i] = coeffs[k];
    }
    Ok(KktMultipliers {
        inequality,
        nu: coeffs[active.len()],
    })
}

pub fn solve_rap_reference(data: &RapData, opts: &BarrierOptions) -> Result<ReferenceSolution> {
    if !(opts.factor > 1.0 && opts.tol > 0.0 && opts.t0 > 0.0) {
        return Err(Error::InvalidConfig(format!("bad barrier options {opts:?}")));
    }
    let d = data.dim();
    let start = rap_strict_interior(data, opts)?;
    let problem = BarrierProblem {
        n: d,
        quad_dim: d,
        objective_q: Some(&data.sigma),
        objective_lin: data.a.clone(),
        ineq_q: &data.e,
        ineqs: rap_ineqs(d, None, data),
        eq_row: DVector::from_element(d, 1.0),
        eq_rhs: 1.0,
    };

    let m = problem.ineqs.len() as f64;
    let mut x = start;
    let mut t = opts.t0;
    let mut central_path = Vec::new();
    let mut newton_steps = 0;
    loop {
        newton_steps += problem.center(t, &mut x, opts)?;
        central_path.push(data.objective(&x));
        if m / t <= opts.tol {
            break;
        }
        t *= opts.factor;
    }

    let multipliers = recover_multipliers(data, &x, t)?;
    let certificate = kkt_residual(data, &x, &multipliers);
    let f = data.objective(&x);
    Ok(ReferenceSolution {
        reference: Reference { x, f },
        multipliers,
        certificate,
        central_path,
        newton_steps,
    })
}

pub fn cache_path(dir: &Path, d: usize, seed: u64) -> PathBuf {
    dir.join(format!("rap_reference_d{d}_seed{seed}.txt"))
}

fn join(v: &DVector<f64>) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

pub fn write_cache(path: &Path, d: usize, seed: u64, sol: &ReferenceSolution) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "d = {d}");
    let _ = writeln!(out, "seed = {seed}");
    let _ = writeln!(out, "f = {:e}", sol.reference.f);
    let _ = writeln!(out, "nu = {:e}", sol.multipliers.nu);
    let _ = writeln!(out, "x = {}", join(&sol.reference.x));
    let _ = writeln!(out, "lambda = {}", join(&sol.multipliers.inequality));
    crate::harness::write_atomic(path, out.as_bytes())
}

/// Reads a cache file; `None` when it does not match `(d, seed)` or is malformed.
pub fn read_cache(path: &Path, data: &RapData, d: usize, seed: u64) -> Option<ReferenceSolution> {
    let text = fs::read_to_string(path).ok()?;
    let mut fields = std::collections::HashMap::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=')?;
        fields.insert(k.trim(), v.trim());
    }
    let vector = |key: &str, len: usize| -> Option<DVector<f64>> {
        let parts: Vec<f64> = fields
            .get(key)?
            .split(',')
            .map(|s| s.parse().ok())
            .collect::<Option<_>>()?;
        (parts.len() == len).then(|| DVector::from_vec(parts))
    };
    if fields.get("d")?.parse::<usize>().ok()? != d || fields.get("seed")?.parse::<u64>().ok()? != seed {
        return None;
    }
    let f: f64 = fields.get("f")?.parse().ok()?;
    let nu: f64 = fields.get("nu")?.parse().ok()?;
    let x = vector("x", d)?;
    let inequality = vector("lambda", d + 2)?;
    if data.dim() != d || (data.objective(&x) - f).abs() > 1e-12 * (1.0 + f.abs()) {
        return None;
    }
    let multipliers = KktMultipliers { inequality, nu };
    let certificate = kkt_residual(data, &x, &multipliers);
    Some(ReferenceSolution {
        reference: Reference { x, f },
        multipliers,
        certificate,
        central_path: Vec::new(),
        newton_steps: 0,
    })
}

/// Loads `(d, seed)` from `dir` if cached, otherwise solves and writes the cache.
pub fn cached_rap_reference(dir: &Path, data: &RapData, d: usize, seed: u64) -> Result<ReferenceSolution> {
    let path = cache_path(dir, d, seed);
    if let Some(sol) = read_cache(&path, data, d, seed) {
        return Ok(sol);
    }
    let sol = solve_rap_reference(data, &BarrierOptions::default())?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_cache(&path, d, seed, &sol)?;
    Ok(sol)
}
