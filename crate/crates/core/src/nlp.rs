//! Primal-dual interior-point solver for
//!
//! ```text
//! maximize   ⟨c, x⟩
//! subject to ℓ_i(x) = 0       (linear equalities)
//!            g_j(x) = 0       (smooth equalities, e.g. quadratic / bilinear)
//!            x_k ≥ lb_k       (lower bounds, possibly -∞)
//! ```
//!
//! Bounds are handled with a logarithmic barrier. Each iteration takes a
//! Newton step on the perturbed KKT conditions, factoring the symmetric
//! indefinite system
//!
//! ```text
//! [ W + Σ + δ_w I    Jᵀ    ] [dx]      [ ∇f + Jᵀλ - μ/(x - lb) ]
//! [ J              -δ_c I  ] [dλ]  = - [ g(x)                   ]
//! ```
//!
//! where `δ_w` is raised until the factorization reports inertia
//! `(n, m, 0)`. Step lengths obey the fraction-to-boundary rule and a
//! backtracking filter line search on the pair (constraint violation,
//! barrier objective), with second-order corrections.
//!
//! Multipliers reported in [`NlpSolution`] follow the maximization
//! convention `c + Jᵀλ + z = 0` with `z ≥ 0` on bounded coordinates.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{LinearEquality, QuadraticEquality};
use crate::error::{Error, Result};
use crate::linalg::{minimum_degree_order, Inertia, SymmetricFactor};

/// An equality constraint `g(x) = 0` with first and second derivatives.
pub trait SmoothEquality: Send + Sync + fmt::Debug {
    fn value(&self, x: &[f64]) -> f64;

    /// Sparse gradient; repeated indices are summed.
    fn gradient(&self, x: &[f64]) -> Vec<(usize, f64)>;

    /// Sparse Hessian as `(i, j, v)` with `i ≥ j`; an off-diagonal entry
    /// stands for both `H[i][j]` and `H[j][i]`. Repeated entries are summed.
    fn hessian(&self, x: &[f64]) -> Vec<(usize, usize, f64)>;

    /// Largest variable index referenced.
    fn max_index(&self) -> usize;
}

fn quadratic_gradient(terms: &[(usize, usize, f64)], x: &[f64], out: &mut Vec<(usize, f64)>) {
    for &(i, j, c) in terms {
        out.push((i, c * x[j]));
        out.push((j, c * x[i]));
    }
}

fn quadratic_hessian(terms: &[(usize, usize, f64)]) -> Vec<(usize, usize, f64)> {
    terms
        .iter()
        .map(|&(i, j, c)| {
            if i == j {
                (i, i, 2.0 * c)
            } else {
                (i.max(j), i.min(j), c)
            }
        })
        .collect()
}

impl SmoothEquality for QuadraticEquality {
    fn value(&self, x: &[f64]) -> f64 {
        QuadraticEquality::value(self, x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.terms.len());
        quadratic_gradient(&self.terms, x, &mut out);
        out
    }

    fn hessian(&self, _x: &[f64]) -> Vec<(usize, usize, f64)> {
        quadratic_hessian(&self.terms)
    }

    fn max_index(&self) -> usize {
        QuadraticEquality::max_index(self)
    }
}

/// General quadratic `g(x) = constant + Σ a_i x_i + Σ c_ij x_i x_j`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuadraticConstraint {
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    pub quadratic: Vec<(usize, usize, f64)>,
}

impl SmoothEquality for QuadraticConstraint {
    fn value(&self, x: &[f64]) -> f64 {
        self.constant
            + self.linear.iter().map(|&(i, a)| a * x[i]).sum::<f64>()
            + self
                .quadratic
                .iter()
                .map(|&(i, j, c)| c * x[i] * x[j])
                .sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut out = self.linear.clone();
        quadratic_gradient(&self.quadratic, x, &mut out);
        out
    }

    fn hessian(&self, _x: &[f64]) -> Vec<(usize, usize, f64)> {
        quadratic_hessian(&self.quadratic)
    }

    fn max_index(&self) -> usize {
        self.linear
            .iter()
            .map(|&(i, _)| i)
            .chain(self.quadratic.iter().map(|&(i, j, _)| i.max(j)))
            .max()
            .unwrap_or(0)
    }
}

/// A linear-objective program with equality constraints and lower bounds.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    pub n_vars: usize,
    /// Sparse objective coefficients (maximized).
    pub objective: Vec<(usize, f64)>,
    pub linear_eqs: Vec<LinearEquality>,
    pub smooth_eqs: Vec<Arc<dyn SmoothEquality>>,
    /// Per-variable lower bound; `f64::NEG_INFINITY` marks a free variable.
    pub lower_bounds: Vec<f64>,
    pub start_point: Vec<f64>,
}

impl NlpProblem {
    /// Validates dimensions and strict interiority of the start point.
    pub fn new(
        n_vars: usize,
        objective: Vec<(usize, f64)>,
        linear_eqs: Vec<LinearEquality>,
        smooth_eqs: Vec<Arc<dyn SmoothEquality>>,
        lower_bounds: Vec<f64>,
        start_point: Vec<f64>,
    ) -> Result<Self> {
        let problem = Self {
            n_vars,
            objective,
            linear_eqs,
            smooth_eqs,
            lower_bounds,
            start_point,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars;
        if n == 0 {
            return Err(Error::InvalidInput("program has no variables".into()));
        }
        for (what, len) in [
            ("lower bounds", self.lower_bounds.len()),
            ("start point", self.start_point.len()),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        let out_of_range = self.objective.iter().any(|&(i, _)| i >= n)
            || self.linear_eqs.iter().any(|l| l.max_index() >= n)
            || self.smooth_eqs.iter().any(|g| g.max_index() >= n);
        if out_of_range {
            return Err(Error::InvalidInput(
                "constraint or objective references a variable out of range".into(),
            ));
        }
        for (i, (&x, &lb)) in self.start_point.iter().zip(&self.lower_bounds).enumerate() {
            if !x.is_finite() || (lb.is_finite() && x <= lb) || lb == f64::INFINITY {
                return Err(Error::InvalidInput(format!(
                    "start point coordinate {i} = {x} is not strictly above its bound {lb}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_constraints(&self) -> usize {
        self.linear_eqs.len() + self.smooth_eqs.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(i, c)| c * x[i]).sum()
    }

    /// Constraint values, linear equalities first.
    pub fn constraint_values(&self, x: &[f64]) -> Vec<f64> {
        self.linear_eqs
            .iter()
            .map(|l| l.value(x))
            .chain(self.smooth_eqs.iter().map(|g| g.value(x)))
            .collect()
    }

    fn objective_dense(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n_vars];
        for &(i, v) in &self.objective {
            c[i] += v;
        }
        c
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub kkt_tol: f64,
    pub max_iters: usize,
    pub barrier_init: f64,
    pub barrier_reduction: f64,
    pub max_wall_seconds: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_iters: 500,
            barrier_init: 0.1,
            barrier_reduction: 0.2,
            max_wall_seconds: f64::INFINITY,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = self.kkt_tol > 0.0
            && self.max_iters > 0
            && self.barrier_init > 0.0
            && self.max_wall_seconds > 0.0;
        if !positive || !(self.barrier_reduction > 0.0 && self.barrier_reduction < 1.0) {
            return Err(Error::InvalidInput(format!("invalid solver options {self:?}")));
        }
        Ok(())
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
    TimeLimit,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::LineSearchFailure => "line_search_failure",
            SolveStatus::TimeLimit => "time_limit",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result of [`solve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    /// Equality multipliers, linear constraints first (maximization convention).
    pub lambda: Vec<f64>,
    /// Bound multipliers (zero on free variables).
    pub z: Vec<f64>,
    pub objective_value: f64,
    pub status: SolveStatus,
    /// Scaled KKT error, see [`KktReport::scaled_error`].
    pub kkt_residual: f64,
    /// Infinity norm of the equality residuals.
    pub constraint_residual: f64,
    pub iterations: usize,
    pub wall_seconds: f64,
}

/// First-order optimality residuals in the infinity norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖c + Jᵀλ + z‖∞`.
    pub stationarity: f64,
    /// Equality residuals and bound violations.
    pub primal_feasibility: f64,
    /// `max_k |(x_k - lb_k) z_k|` over bounded coordinates.
    pub complementarity: f64,
    /// Largest negative part of `z` on bounded coordinates, or `|z|` on free ones.
    pub dual_infeasibility: f64,
    /// Divisor applied to stationarity, `max(1, (‖λ‖₁ + ‖z‖₁) / (100 (m + n)))`.
    pub stationarity_scale: f64,
    /// Divisor applied to complementarity, `max(1, ‖z‖₁ / (100 n))`.
    pub complementarity_scale: f64,
}

impl KktReport {
    /// Overall error with multiplier-magnitude scaling of the dual quantities.
    pub fn scaled_error(&self) -> f64 {
        (self.stationarity / self.stationarity_scale)
            .max(self.primal_feasibility)
            .max(self.complementarity / self.complementarity_scale)
            .max(self.dual_infeasibility)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.scaled_error() <= tol
    }
}

const SCALE_MAX: f64 = 100.0;

fn multiplier_scales(lambda: &[f64], z: &[f64]) -> (f64, f64) {
    let l1: f64 = lambda.iter().map(|v| v.abs()).sum();
    let z1: f64 = z.iter().map(|v| v.abs()).sum();
    let count = (lambda.len() + z.len()).max(1) as f64;
    let s_d = ((l1 + z1) / count).max(SCALE_MAX) / SCALE_MAX;
    let s_c = (z1 / z.len().max(1) as f64).max(SCALE_MAX) / SCALE_MAX;
    (s_d, s_c)
}

/// Evaluates the KKT conditions of `problem` at `(x, λ, z)` (maximization
/// convention) directly from the problem data.
pub fn check_kkt(problem: &NlpProblem, x: &[f64], lambda: &[f64], z: &[f64]) -> Result<KktReport> {
    let n = problem.n_vars;
    let m = problem.n_constraints();
    for (what, expected, got) in [
        ("x", n, x.len()),
        ("lambda", m, lambda.len()),
        ("z", n, z.len()),
    ] {
        if expected != got {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                got,
            });
        }
    }
    let mut grad = vec![0.0; n];
    for &(i, c) in &problem.objective {
        grad[i] += c;
    }
    for (l, &lam) in problem.linear_eqs.iter().zip(lambda) {
        for &(i, c) in &l.coeffs {
            grad[i] += lam * c;
        }
    }
    for (g, &lam) in problem
        .smooth_eqs
        .iter()
        .zip(&lambda[problem.linear_eqs.len()..])
    {
        for (i, v) in g.gradient(x) {
            grad[i] += lam * v;
        }
    }
    let mut primal = problem
        .constraint_values(x)
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut complementarity = 0.0f64;
    let mut dual_infeasibility = 0.0f64;
    for i in 0..n {
        grad[i] += z[i];
        let lb = problem.lower_bounds[i];
        if lb.is_finite() {
            primal = primal.max(lb - x[i]);
            complementarity = complementarity.max(((x[i] - lb) * z[i]).abs());
            dual_infeasibility = dual_infeasibility.max(-z[i]);
        } else {
            dual_infeasibility = dual_infeasibility.max(z[i].abs());
        }
    }
    let (s_d, s_c) = multiplier_scales(lambda, z);
    Ok(KktReport {
        stationarity: grad.iter().fold(0.0f64, |acc, v| acc.max(v.abs())),
        primal_feasibility: primal,
        complementarity,
        dual_infeasibility,
        stationarity_scale: s_d,
        complementarity_scale: s_c,
    })
}

const FRACTION_TO_BOUNDARY: f64 = 0.995;
const ETA_PHI: f64 = 1e-8;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const MAX_SOC: usize = 4;
const DELTA_W_INIT: f64 = 1e-8;
const DELTA_W_MAX: f64 = 1e40;
const KAPPA_SIGMA: f64 = 1e10;
const ZERO_PIVOT_TOL: f64 = 1e-13;
const DELTA_C_MAX: f64 = 1e-2;
/// Relative size a diagonal pivot needs to be taken in elimination order.
const PIVOT_THRESHOLD: f64 = 1e-2;
const MAX_REFINEMENTS: usize = 10;
const REFINEMENT_TOL: f64 = 1e-15;
const MAX_RESTORATIONS: usize = 5;

/// Internal state in the minimization convention `min -⟨c, x⟩`.
struct Solver<'a> {
    problem: &'a NlpProblem,
    options: SolveOptions,
    n: usize,
    m: usize,
    m_lin: usize,
    bounded: Vec<bool>,
    lb: Vec<f64>,
    grad_f: Vec<f64>,
    jac_lin: Vec<f64>,
    x: Vec<f64>,
    lam: Vec<f64>,
    z: Vec<f64>,
    mu: f64,
    delta_w_last: f64,
    /// Fill-reducing elimination order of the KKT rows.
    order: Vec<usize>,
    /// Forbidden `(θ, φ)` corners; cleared whenever `μ` changes.
    filter: Vec<(f64, f64)>,
    theta_min: f64,
    theta_max: f64,
}

struct Evaluation {
    cons: Vec<f64>,
    jac: Vec<f64>,
}

/// A factor of the KKT matrix together with the matrix itself, for
/// iterative refinement.
struct KktFactor {
    factor: SymmetricFactor,
    /// Entries `(i, j, v)` standing for both `K[i][j]` and `K[j][i]`.
    entries: Vec<(usize, usize, f64)>,
}

impl KktFactor {
    fn new(entries: Vec<(usize, usize, f64)>, order: &[usize], zero_tol: f64) -> Self {
        let factor = SymmetricFactor::factor_sparse(order.len(), &entries, order, zero_tol, PIVOT_THRESHOLD);
        Self { factor, entries }
    }

    fn inertia(&self) -> Inertia {
        self.factor.inertia()
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut r = b.to_vec();
        for &(i, j, v) in &self.entries {
            r[i] -= v * x[j];
            if i != j {
                r[j] -= v * x[i];
            }
        }
        r
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let b = rhs.to_vec();
        self.factor.solve_in_place(rhs);
        let b_norm = inf_norm(&b);
        let mut last = f64::INFINITY;
        for _ in 0..MAX_REFINEMENTS {
            let mut r = self.residual(rhs, &b);
            let r_norm = inf_norm(&r);
            if !(r_norm > REFINEMENT_TOL * b_norm) || r_norm > 0.5 * last {
                break;
            }
            last = r_norm;
            self.factor.solve_in_place(&mut r);
            for (xi, ri) in rhs.iter_mut().zip(&r) {
                *xi += ri;
            }
        }
    }
}

struct Step {
    dx: Vec<f64>,
    dlam: Vec<f64>,
    factor: KktFactor,
    rhs_x: Vec<f64>,
}

/// Minimum-degree order on the structural KKT pattern.
fn kkt_order(problem: &NlpProblem) -> Vec<usize> {
    let n = problem.n_vars;
    let m_lin = problem.linear_eqs.len();
    let x = &problem.start_point;
    let mut edges = Vec::new();
    for (r, l) in problem.linear_eqs.iter().enumerate() {
        edges.extend(l.coeffs.iter().map(|&(i, _)| (i, n + r)));
    }
    for (r, g) in problem.smooth_eqs.iter().enumerate() {
        edges.extend(g.gradient(x).iter().map(|&(i, _)| (i, n + m_lin + r)));
        edges.extend(g.hessian(x).iter().map(|&(i, j, _)| (i, j)));
    }
    minimum_degree_order(n + problem.n_constraints(), &edges)
}

impl<'a> Solver<'a> {
    fn new(problem: &'a NlpProblem, options: SolveOptions) -> Self {
        let n = problem.n_vars;
        let m = problem.n_constraints();
        let lb = problem.lower_bounds.clone();
        let bounded: Vec<bool> = lb.iter().map(|l| l.is_finite()).collect();
        let grad_f = problem.objective_dense().iter().map(|c| -c).collect();
        let mu = options.barrier_init;
        let x = problem.start_point.clone();
        let z = (0..n)
            .map(|i| if bounded[i] { mu / (x[i] - lb[i]) } else { 0.0 })
            .collect();
        let m_lin = problem.linear_eqs.len();
        let mut jac_lin = vec![0.0; m_lin * n];
        for (r, l) in problem.linear_eqs.iter().enumerate() {
            for &(i, c) in &l.coeffs {
                jac_lin[r * n + i] += c;
            }
        }
        let order = kkt_order(problem);
        Self {
            problem,
            options,
            n,
            m,
            m_lin,
            bounded,
            lb,
            grad_f,
            jac_lin,
            x,
            lam: vec![0.0; m],
            z,
            mu,
            delta_w_last: 0.0,
            order,
            filter: Vec::new(),
            theta_min: 0.0,
            theta_max: f64::INFINITY,
        }
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        let n = self.n;
        let mut jac = vec![0.0; self.m * n];
        jac[..self.m_lin * n].copy_from_slice(&self.jac_lin);
        for (r, g) in self.problem.smooth_eqs.iter().enumerate() {
            for (i, v) in g.gradient(x) {
                jac[(self.m_lin + r) * n + i] += v;
            }
        }
        Evaluation {
            cons: self.problem.constraint_values(x),
            jac,
        }
    }

    /// `∇f + Jᵀλ - z`.
    fn lagrangian_gradient(&self, eval: &Evaluation) -> Vec<f64> {
        let n = self.n;
        let mut g = self.grad_f.clone();
        for (r, &lam) in self.lam.iter().enumerate() {
            if lam == 0.0 {
                continue;
            }
            for (gi, &j) in g.iter_mut().zip(&eval.jac[r * n..(r + 1) * n]) {
                *gi += lam * j;
            }
        }
        for (gi, zi) in g.iter_mut().zip(&self.z) {
            *gi -= zi;
        }
        g
    }

    /// Scaled KKT error of the barrier problem with parameter `mu`.
    fn error(&self, eval: &Evaluation, mu: f64) -> f64 {
        let stat = inf_norm(&self.lagrangian_gradient(eval));
        let feas = inf_norm(&eval.cons);
        let compl = (0..self.n)
            .filter(|&i| self.bounded[i])
            .map(|i| ((self.x[i] - self.lb[i]) * self.z[i] - mu).abs())
            .fold(0.0, f64::max);
        let (s_d, s_c) = multiplier_scales(&self.lam, &self.z);
        (stat / s_d).max(feas).max(compl / s_c)
    }

    /// `φ_μ(x) = f(x) - μ Σ ln(x_i - lb_i)`.
    fn barrier_objective(&self, x: &[f64]) -> f64 {
        let f: f64 = self.grad_f.iter().zip(x).map(|(g, x)| g * x).sum();
        let barrier: f64 = (0..self.n)
            .filter(|&i| self.bounded[i])
            .map(|i| (x[i] - self.lb[i]).ln())
            .sum();
        f - self.mu * barrier
    }

    fn filter_accepts(&self, theta: f64, phi: f64) -> bool {
        self.filter.iter().all(|&(t, p)| theta < t || phi < p)
    }

    fn augment_filter(&mut self, theta: f64, phi: f64) {
        let entry = ((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta);
        self.filter
            .retain(|&(t, p)| !(t >= entry.0 && p >= entry.1));
        self.filter.push(entry);
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut w = vec![0.0; n * n];
        for (g, &lam) in self.problem.smooth_eqs.iter().zip(&self.lam[self.m_lin..]) {
            if lam == 0.0 {
                continue;
            }
            for (i, j, v) in g.hessian(x) {
                w[i * n + j] += lam * v;
            }
        }
        w
    }

    /// Factors the KKT matrix with inertia correction and solves for the
    /// Newton direction.
    fn newton_step(&mut self, eval: &Evaluation) -> Option<Step> {
        let n = self.n;
        let m = self.m;
        let w = self.hessian(&self.x);
        let mut base = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                let v = w[i * n + j];
                if v != 0.0 {
                    base.push((i, j, v));
                }
            }
            if self.bounded[i] {
                base.push((i, i, self.z[i] / (self.x[i] - self.lb[i])));
            }
        }
        for r in 0..m {
            let row = &eval.jac[r * n..(r + 1) * n];
            for (i, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    base.push((i, n + r, v));
                }
            }
        }

        let mut delta_w = 0.0;
        let mut delta_c = 0.0;
        let factor = loop {
            let mut k = base.clone();
            if delta_w > 0.0 {
                k.extend((0..n).map(|i| (i, i, delta_w)));
            }
            if delta_c > 0.0 {
                k.extend((0..m).map(|r| (n + r, n + r, -delta_c)));
            }
            let f = KktFactor::new(k, &self.order, ZERO_PIVOT_TOL);
            let inertia = f.inertia();
            if inertia.positive == n && inertia.negative == m && inertia.zero == 0 {
                break f;
            }
            if inertia.zero > 0 && m > 0 && delta_c < DELTA_C_MAX {
                delta_c = if delta_c == 0.0 {
                    1e-8 * self.mu.powf(0.25)
                } else {
                    delta_c * 100.0
                };
                continue;
            }
            delta_w = if delta_w == 0.0 {
                if self.delta_w_last == 0.0 {
                    DELTA_W_INIT
                } else {
                    (self.delta_w_last / 3.0).max(1e-20)
                }
            } else {
                delta_w * 10.0
            };
            if delta_w > DELTA_W_MAX {
                return None;
            }
        };
        if delta_w > 0.0 {
            self.delta_w_last = delta_w;
        }

        let grad_l = self.lagrangian_gradient(eval);
        let rhs_x: Vec<f64> = (0..n)
            .map(|i| {
                let barrier = if self.bounded[i] {
                    // -z + μ/s replaces the bound term of ∇L
                    self.z[i] - self.mu / (self.x[i] - self.lb[i])
                } else {
                    0.0
                };
                -(grad_l[i] + barrier)
            })
            .collect();
        let mut rhs: Vec<f64> = rhs_x.iter().copied().chain(eval.cons.iter().map(|c| -c)).collect();
        factor.solve_in_place(&mut rhs);
        if rhs.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dlam = rhs.split_off(n);
        Some(Step {
            dx: rhs,
            dlam,
            factor,
            rhs_x,
        })
    }

    fn max_step(&self, values: &[f64], lower: &[f64], direction: &[f64]) -> f64 {
        let mut alpha = 1.0f64;
        for i in 0..self.n {
            if !self.bounded[i] || direction[i] >= 0.0 {
                continue;
            }
            let gap = values[i] - lower[i];
            alpha = alpha.min(-FRACTION_TO_BOUNDARY * gap / direction[i]);
        }
        alpha
    }

    fn run(mut self) -> NlpSolution {
        let start = Instant::now();
        let tol = self.options.kkt_tol;
        let mu_min = tol / 10.0;
        let mut eval = self.evaluate(&self.x);
        let theta0 = one_norm(&eval.cons);
        self.theta_min = 1e-4 * theta0.max(1.0);
        self.theta_max = 1e4 * theta0.max(1.0);
        let mut iterations = 0;
        let mut restorations = 0;
        let zero_z = vec![0.0; self.n];

        let status = loop {
            if eval.cons.iter().any(|c| !c.is_finite()) {
                break SolveStatus::NumericalFailure;
            }
            if self.error(&eval, 0.0) <= tol {
                break SolveStatus::Converged;
            }
            if iterations >= self.options.max_iters {
                break SolveStatus::MaxIters;
            }
            if start.elapsed().as_secs_f64() > self.options.max_wall_seconds {
                break SolveStatus::TimeLimit;
            }
            while self.mu > mu_min && self.error(&eval, self.mu) <= self.mu {
                self.mu = (self.options.barrier_reduction * self.mu)
                    .min(self.mu.powf(1.5))
                    .max(mu_min);
                self.filter.clear();
            }
            iterations += 1;
            log::debug!(
                "ipm iter {iterations}: f = {:.12e}, |c| = {:.3e}, mu = {:.3e}",
                self.problem.objective_value(&self.x),
                inf_norm(&eval.cons),
                self.mu
            );

            let Some(step) = self.newton_step(&eval) else {
                break SolveStatus::NumericalFailure;
            };
            let slope: f64 = (0..self.n)
                .map(|i| {
                    let barrier = if self.bounded[i] {
                        self.mu / (self.x[i] - self.lb[i])
                    } else {
                        0.0
                    };
                    (self.grad_f[i] - barrier) * step.dx[i]
                })
                .sum();

            let alpha_max = self.max_step(&self.x, &self.lb, &step.dx);
            let dz: Vec<f64> = (0..self.n)
                .map(|i| {
                    if self.bounded[i] {
                        let s = self.x[i] - self.lb[i];
                        self.mu / s - self.z[i] - self.z[i] / s * step.dx[i]
                    } else {
                        0.0
                    }
                })
                .collect();
            let alpha_z = self.max_step(&self.z, &zero_z, &dz);

            let tiny = step
                .dx
                .iter()
                .zip(&self.x)
                .all(|(d, x)| d.abs() <= 10.0 * f64::EPSILON * (1.0 + x.abs()));

            let accepted = if tiny {
                Some((self.axpy(alpha_max, &step.dx), alpha_max))
            } else {
                self.line_search(&step, &eval, slope, alpha_max)
            };

            match accepted {
                Some((x_new, alpha)) => {
                    restorations = 0;
                    for (l, d) in self.lam.iter_mut().zip(&step.dlam) {
                        *l += alpha * d;
                    }
                    for (zi, d) in self.z.iter_mut().zip(&dz) {
                        *zi += alpha_z * d;
                    }
                    self.x = x_new;
                    self.safeguard_z();
                    eval = self.evaluate(&self.x);
                    log::debug!(
                        "iter {iterations:4} obj {:+.10e} kkt {:.3e} mu {:.2e} step {:.3e}",
                        self.problem.objective_value(&self.x),
                        self.error(&eval, 0.0),
                        self.mu,
                        alpha
                    );
                }
                None => {
                    restorations += 1;
                    let theta = one_norm(&eval.cons);
                    let phi = self.barrier_objective(&self.x);
                    self.augment_filter(theta, phi);
                    if restorations > MAX_RESTORATIONS || inf_norm(&eval.cons) <= tol {
                        break SolveStatus::LineSearchFailure;
                    }
                    log::debug!(
                        "iter {iterations:4} line search failed at infeasibility {:.2e}; restoring feasibility",
                        inf_norm(&eval.cons)
                    );
                    if !self.restore(&mut eval) {
                        break SolveStatus::LineSearchFailure;
                    }
                }
            }
        };

        let kkt_residual = self.error(&eval, 0.0);
        let constraint_residual = inf_norm(&eval.cons);
        NlpSolution {
            objective_value: self.problem.objective_value(&self.x),
            lambda: self.lam.iter().map(|l| -l).collect(),
            z: self.z,
            x: self.x,
            status,
            kkt_residual,
            constraint_residual,
            iterations,
            wall_seconds: start.elapsed().as_secs_f64(),
        }
    }

    fn axpy(&self, alpha: f64, d: &[f64]) -> Vec<f64> {
        self.x.iter().zip(d).map(|(x, d)| x + alpha * d).collect()
    }

    fn strictly_interior(&self, x: &[f64]) -> bool {
        (0..self.n).all(|i| !self.bounded[i] || x[i] > self.lb[i])
    }

    /// Backtracking filter line search. Returns the accepted point and step
    /// length, or `None` when the step falls below the minimal length.
    fn line_search(
        &mut self,
        step: &Step,
        eval: &Evaluation,
        slope: f64,
        alpha_max: f64,
    ) -> Option<(Vec<f64>, f64)> {
        let theta = one_norm(&eval.cons);
        let phi = self.barrier_objective(&self.x);
        let slack = 10.0 * f64::EPSILON * phi.abs().max(1.0);
        let alpha_min = GAMMA_ALPHA
            * if slope < 0.0 {
                GAMMA_THETA
                    .min(GAMMA_PHI * theta / -slope)
                    .min(theta.powf(S_THETA) / (-slope).powf(S_PHI))
            } else {
                GAMMA_THETA
            };
        let mut alpha = alpha_max;
        let mut first = true;
        while alpha >= alpha_min || first {
            let switching = slope < 0.0 && alpha * (-slope).powf(S_PHI) > theta.powf(S_THETA);
            let acceptable = |this: &Self, x_t: &[f64]| -> Option<bool> {
                if !this.strictly_interior(x_t) {
                    return None;
                }
                let theta_t = one_norm(&this.problem.constraint_values(x_t));
                let phi_t = this.barrier_objective(x_t);
                if !theta_t.is_finite() || !phi_t.is_finite() || theta_t > this.theta_max {
                    return None;
                }
                if !this.filter_accepts(theta_t, phi_t) {
                    return None;
                }
                if switching && theta <= this.theta_min {
                    (phi_t <= phi + ETA_PHI * alpha * slope + slack).then_some(true)
                } else {
                    (theta_t <= (1.0 - GAMMA_THETA) * theta
                        || phi_t <= phi - GAMMA_PHI * theta + slack)
                        .then_some(false)
                }
            };
            let x_t = self.axpy(alpha, &step.dx);
            let mut found = acceptable(self, &x_t).map(|f_type| (x_t.clone(), f_type));
            if found.is_none() && first && !self.problem.smooth_eqs.is_empty() && self.strictly_interior(&x_t) {
                let cons_t = self.problem.constraint_values(&x_t);
                let mut theta_old = one_norm(&cons_t);
                if theta_old >= theta {
                    let mut c_soc: Vec<f64> = eval
                        .cons
                        .iter()
                        .zip(&cons_t)
                        .map(|(c, ct)| alpha * c + ct)
                        .collect();
                    for _ in 0..MAX_SOC {
                        let Some((x_soc, alpha_soc)) = self.second_order_correction(step, &c_soc) else {
                            break;
                        };
                        if let Some(f_type) = acceptable(self, &x_soc) {
                            found = Some((x_soc, f_type));
                            break;
                        }
                        let cons_soc = self.problem.constraint_values(&x_soc);
                        let theta_soc = one_norm(&cons_soc);
                        if theta_soc > 0.99 * theta_old {
                            break;
                        }
                        theta_old = theta_soc;
                        for (c, cs) in c_soc.iter_mut().zip(&cons_soc) {
                            *c = alpha_soc * *c + cs;
                        }
                    }
                }
            }
            if let Some((x_new, f_type)) = found {
                if !f_type {
                    self.augment_filter(theta, phi);
                }
                return Some((x_new, alpha));
            }
            first = false;
            alpha *= 0.5;
        }
        None
    }

    /// Re-solves the Newton system with accumulated constraint values
    /// `c_soc` to pull a rejected step back towards the constraint manifold.
    fn second_order_correction(&self, step: &Step, c_soc: &[f64]) -> Option<(Vec<f64>, f64)> {
        let mut rhs: Vec<f64> = step
            .rhs_x
            .iter()
            .copied()
            .chain(c_soc.iter().map(|c| -c))
            .collect();
        step.factor.solve_in_place(&mut rhs);
        rhs.truncate(self.n);
        if rhs.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let alpha_soc = self.max_step(&self.x, &self.lb, &rhs);
        let x_soc = self.axpy(alpha_soc, &rhs);
        self.strictly_interior(&x_soc).then_some((x_soc, alpha_soc))
    }

    /// Levenberg-Marquardt steps on `½‖g(x)‖²` scaled by the distance to the
    /// bounds. Succeeds once the ℓ1 violation drops by 10 %.
    fn restore(&mut self, eval: &mut Evaluation) -> bool {
        let n = self.n;
        let m = self.m;
        let initial = one_norm(&eval.cons);
        let target = (0.9 * initial).max(0.1 * self.options.kkt_tol);
        let mut rho = 1e-4;
        for _ in 0..60 {
            let mut k = Vec::new();
            for i in 0..n {
                let d = if self.bounded[i] {
                    1.0 / (self.x[i] - self.lb[i])
                } else {
                    1.0
                };
                k.push((i, i, rho * d * d));
            }
            for r in 0..m {
                for (i, &v) in eval.jac[r * n..(r + 1) * n].iter().enumerate() {
                    if v != 0.0 {
                        k.push((i, n + r, v));
                    }
                }
                k.push((n + r, n + r, -1.0));
            }
            let factor = KktFactor::new(k, &self.order, 0.0);
            let mut rhs: Vec<f64> = vec![0.0; n];
            rhs.extend(eval.cons.iter().map(|c| -c));
            factor.solve_in_place(&mut rhs);
            rhs.truncate(n);
            if rhs.iter().any(|v| !v.is_finite()) {
                return false;
            }
            let alpha = self.max_step(&self.x, &self.lb, &rhs);
            let x_t = self.axpy(alpha, &rhs);
            let cons_t = self.problem.constraint_values(&x_t);
            if self.strictly_interior(&x_t) && one_norm(&cons_t) < one_norm(&eval.cons) {
                self.x = x_t;
                *eval = self.evaluate(&self.x);
                rho = (rho / 10.0).max(1e-12);
                if one_norm(&eval.cons) <= target {
                    for i in 0..n {
                        if self.bounded[i] {
                            self.z[i] = self.mu / (self.x[i] - self.lb[i]);
                        }
                    }
                    return true;
                }
            } else {
                rho *= 10.0;
                if rho > 1e12 {
                    return false;
                }
            }
        }
        false
    }

    fn safeguard_z(&mut self) {
        for i in 0..self.n {
            if !self.bounded[i] {
                continue;
            }
            let s = self.x[i] - self.lb[i];
            let lo = self.mu / (KAPPA_SIGMA * s);
            let hi = KAPPA_SIGMA * self.mu / s;
            self.z[i] = self.z[i].clamp(lo, hi);
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

fn one_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Rejects programs whose linear equalities have no common solution.
fn check_linear_consistency(problem: &NlpProblem) -> Result<()> {
    let m = problem.linear_eqs.len();
    if m == 0 {
        return Ok(());
    }
    let n = problem.n_vars;
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (r, l) in problem.linear_eqs.iter().enumerate() {
        for &(i, c) in &l.coeffs {
            a[(r, i)] += c;
        }
        b[r] = -l.constant;
    }
    let svd = a.clone().svd(true, true);
    let x = svd
        .solve(&b, 1e-12 * svd.singular_values.max().max(1.0))
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let residual = (&a * x - &b).amax();
    if residual > 1e-8 * (1.0 + b.amax()) {
        return Err(Error::InfeasibleLinear);
    }
    Ok(())
}

/// Solves `problem` to local first-order stationarity.
pub fn solve(problem: &NlpProblem, options: &SolveOptions) -> Result<NlpSolution> {
    options.validate()?;
    problem.validate()?;
    check_linear_consistency(problem)?;
    Ok(Solver::new(problem, *options).run())
}

/// SplitMix64 step, used for deterministic start perturbations.
pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn unit_interval(state: &mut u64) -> f64 {
    (splitmix64(state) >> 11) as f64 / (1u64 << 53) as f64
}

/// Picks the best of several solutions: converged before unconverged,
/// then larger objective, ties to the lower index.
pub fn select_best<T>(candidates: Vec<T>, key: impl Fn(&T) -> (bool, f64)) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, cand) in candidates.into_iter().enumerate() {
        let better = match &best {
            None => true,
            Some((_, b)) => {
                let (bc, bv) = key(b);
                let (cc, cv) = key(&cand);
                (cc && !bc) || (cc == bc && cv > bv)
            }
        };
        if better {
            best = Some((i, cand));
        }
    }
    best
}

/// Runs `restarts` solves from the given start and deterministic
/// perturbations of it (multiplicative on bounded coordinates), returning
/// the best converged solution.
pub fn solve_multistart(
    problem: &NlpProblem,
    options: &SolveOptions,
    restarts: usize,
    seed: u64,
) -> Result<NlpSolution> {
    options.validate()?;
    problem.validate()?;
    check_linear_consistency(problem)?;
    let starts: Vec<Vec<f64>> = (0..restarts.max(1))
        .map(|k| {
            if k == 0 {
                return problem.start_point.clone();
            }
            let mut state = seed ^ (k as u64).wrapping_mul(0xA076_1D64_78BD_642F);
            problem
                .start_point
                .iter()
                .zip(&problem.lower_bounds)
                .map(|(&x, &lb)| {
                    let u = 2.0 * unit_interval(&mut state) - 1.0;
                    if lb.is_finite() {
                        lb + (x - lb) * (0.5 * u).exp()
                    } else {
                        x + 0.1 * (1.0 + x.abs()) * u
                    }
                })
                .collect()
        })
        .collect();
    let solutions: Vec<NlpSolution> = starts
        .into_par_iter()
        .map(|start| {
            let mut p = problem.clone();
            p.start_point = start;
            Solver::new(&p, *options).run()
        })
        .collect();
    select_best(solutions, |s| (s.status == SolveStatus::Converged, s.objective_value))
        .map(|(_, s)| s)
        .ok_or_else(|| Error::InvalidInput("no restarts requested".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segment(objective: Vec<(usize, f64)>, smooth: Vec<Arc<dyn SmoothEquality>>) -> NlpProblem {
        NlpProblem::new(
            2,
            objective,
            vec![LinearEquality::new(vec![(0, 1.0), (1, 1.0)], -1.0).unwrap()],
            smooth,
            vec![0.0, 0.0],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn lp_vertex_of_segment() {
        let p = segment(vec![(0, 1.0)], vec![]);
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!((sol.x[0] - 1.0).abs() < 1e-8 && sol.x[1].abs() < 1e-8);
        assert!((sol.objective_value - 1.0).abs() < 1e-8);
        assert!(check_kkt(&p, &sol.x, &sol.lambda, &sol.z).unwrap().passes(1e-8));
    }

    #[test]
    fn lp_constant_objective_face() {
        let p = segment(vec![(0, 1.0), (1, 1.0)], vec![]);
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!((sol.objective_value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn complementarity_variety() {
        let product = QuadraticConstraint {
            quadratic: vec![(0, 1, 1.0)],
            ..Default::default()
        };
        let p = segment(vec![(0, 1.0)], vec![Arc::new(product)]);
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged, "{sol:?}");
        assert!((sol.x[0] - 1.0).abs() < 1e-6 && sol.x[1].abs() < 1e-6, "{:?}", sol.x);
        assert!((sol.objective_value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kkt_report_hand_values() {
        let p = segment(vec![(0, 1.0)], vec![]);
        let r = check_kkt(&p, &[1.0, 0.0], &[-1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(r.stationarity, 0.0);
        assert_eq!(r.primal_feasibility, 0.0);
        assert_eq!(r.complementarity, 0.0);
        assert_eq!(r.dual_infeasibility, 0.0);

        let r = check_kkt(&p, &[0.5, 0.5], &[0.0], &[0.0, 0.0]).unwrap();
        assert!(r.stationarity > 0.0);
        assert!(!r.passes(1e-8));
    }

    #[test]
    fn inconsistent_linear_rejected() {
        let p = NlpProblem::new(
            2,
            vec![(0, 1.0)],
            vec![
                LinearEquality::new(vec![(0, 1.0), (1, 1.0)], -1.0).unwrap(),
                LinearEquality::new(vec![(0, 2.0), (1, 2.0)], -3.0).unwrap(),
            ],
            vec![],
            vec![0.0, 0.0],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!(matches!(
            solve(&p, &SolveOptions::default()),
            Err(Error::InfeasibleLinear)
        ));
    }

    #[test]
    fn redundant_linear_rows_are_tolerated() {
        let p = NlpProblem::new(
            2,
            vec![(1, 1.0)],
            vec![
                LinearEquality::new(vec![(0, 1.0), (1, 1.0)], -1.0).unwrap(),
                LinearEquality::new(vec![(0, 2.0), (1, 2.0)], -2.0).unwrap(),
            ],
            vec![],
            vec![0.0, 0.0],
            vec![0.5, 0.5],
        )
        .unwrap();
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!((sol.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn free_variables_and_bilinear_constraint() {
        // maximize y s.t. y = 2 x0 x1, x0 + x1 = 1, x ≥ 0, y free → x = (½, ½), y = ½
        let bilinear = QuadraticConstraint {
            linear: vec![(2, 1.0)],
            quadratic: vec![(0, 1, -2.0)],
            ..Default::default()
        };
        let p = NlpProblem::new(
            3,
            vec![(2, 1.0)],
            vec![LinearEquality::new(vec![(0, 1.0), (1, 1.0)], -1.0).unwrap()],
            vec![Arc::new(bilinear)],
            vec![0.0, 0.0, f64::NEG_INFINITY],
            vec![0.3, 0.7, 0.0],
        )
        .unwrap();
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!((sol.x[2] - 0.5).abs() < 1e-7);
        assert!(check_kkt(&p, &sol.x, &sol.lambda, &sol.z).unwrap().passes(1e-8));
    }

    #[test]
    fn deterministic_reruns() {
        let product = QuadraticConstraint {
            quadratic: vec![(0, 1, 1.0)],
            ..Default::default()
        };
        let p = segment(vec![(0, 1.0)], vec![Arc::new(product)]);
        let a = solve(&p, &SolveOptions::default()).unwrap();
        let b = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn quadratic_derivatives_match_finite_differences() {
        let g = QuadraticConstraint {
            constant: 0.3,
            linear: vec![(0, 1.5), (2, -0.5)],
            quadratic: vec![(0, 1, 2.0), (2, 2, -1.0), (1, 0, 0.5)],
        };
        let x = [0.3, -0.7, 1.1];
        let h = 1e-5;
        let mut grad = [0.0; 3];
        for (i, v) in g.gradient(&x) {
            grad[i] += v;
        }
        let mut hess = [[0.0; 3]; 3];
        for (i, j, v) in g.hessian(&x) {
            hess[i][j] += v;
            if i != j {
                hess[j][i] += v;
            }
        }
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (g.value(&xp) - g.value(&xm)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + grad[i].abs()));
            let mut gp = [0.0; 3];
            let mut gm = [0.0; 3];
            for (k, v) in g.gradient(&xp) {
                gp[k] += v;
            }
            for (k, v) in g.gradient(&xm) {
                gm[k] += v;
            }
            for j in 0..3 {
                let fd = (gp[j] - gm[j]) / (2.0 * h);
                assert!((fd - hess[j][i]).abs() <= 1e-6 * (1.0 + hess[j][i].abs()));
            }
        }
    }

    #[test]
    fn time_limit_is_reported() {
        let p = segment(vec![(0, 1.0)], vec![]);
        let opts = SolveOptions {
            max_wall_seconds: 1e-12,
            ..Default::default()
        };
        let sol = solve(&p, &opts).unwrap();
        assert!(matches!(sol.status, SolveStatus::TimeLimit | SolveStatus::Converged));
        let opts = SolveOptions {
            max_iters: 1,
            ..Default::default()
        };
        assert_eq!(solve(&p, &opts).unwrap().status, SolveStatus::MaxIters);
    }

    #[test]
    fn multistart_keeps_best() {
        let product = QuadraticConstraint {
            quadratic: vec![(0, 1, 1.0)],
            ..Default::default()
        };
        let p = segment(vec![(0, 1.0), (1, 0.5)], vec![Arc::new(product)]);
        let sol = solve_multistart(&p, &SolveOptions::default(), 4, 7).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!((sol.objective_value - 1.0).abs() < 1e-6);
    }
}
