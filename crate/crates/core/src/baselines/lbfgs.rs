//! Limited-memory BFGS minimization with a strong Wolfe line search.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Sufficient decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Stop when `‖∇f‖∞` falls to this value.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub max_wall_seconds: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-6,
            max_iters: 1000,
            max_wall_seconds: f64::INFINITY,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.memory > 0
            && 0.0 < self.c1
            && self.c1 < self.c2
            && self.c2 < 1.0
            && self.grad_tol > 0.0
            && self.max_wall_seconds > 0.0;
        if !ok {
            return Err(Error::InvalidInput(format!("invalid L-BFGS options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
    TimeLimit,
}

/// Objective value and gradient norm after each accepted step; entry 0 is
/// the start point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsStep {
    pub value: f64,
    pub grad_norm: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub status: LbfgsStatus,
    pub trace: Vec<LbfgsStep>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Two-loop recursion: `-H ∇f` for the stored pairs.
fn direction(grad: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Probe {
    alpha: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

/// Minimizer of the cubic interpolating two probes, safeguarded to the
/// inner part of the bracket.
fn interpolate(lo: &Probe, hi: &Probe) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let mut t = f64::NAN;
    if disc >= 0.0 {
        let d2 = (b - a).signum() * disc.sqrt();
        t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    }
    let (left, right) = (a.min(b), a.max(b));
    let margin = 0.1 * (right - left);
    if !t.is_finite() || t < left + margin || t > right - margin {
        0.5 * (a + b)
    } else {
        t
    }
}

const MAX_EVALS: usize = 40;

/// Strong Wolfe line search (bracketing followed by zoom). Returns `None`
/// when no acceptable step is found within the evaluation budget.
fn line_search<F>(
    f: &mut F,
    x: &[f64],
    value: f64,
    slope0: f64,
    dir: &[f64],
    alpha_init: f64,
    opts: &LbfgsOptions,
) -> Result<Option<Probe>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut probe = |alpha: f64| -> Result<Probe> {
        let xn: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect();
        let (v, g) = f(&xn)?;
        Ok(Probe {
            alpha,
            value: v,
            slope: dot(&g, dir),
            x: xn,
            grad: g,
        })
    };
    let start = Probe {
        alpha: 0.0,
        value,
        slope: slope0,
        x: x.to_vec(),
        grad: Vec::new(),
    };
    let armijo = |p: &Probe| p.value <= value + opts.c1 * p.alpha * slope0;
    let curvature = |p: &Probe| p.slope.abs() <= -opts.c2 * slope0;

    let mut prev = start;
    let mut alpha = alpha_init;
    let mut evals = 0;
    let (mut lo, mut hi);
    loop {
        let cur = probe(alpha)?;
        evals += 1;
        if !cur.value.is_finite() {
            hi = cur;
            lo = prev;
            break;
        }
        if !armijo(&cur) || (evals > 1 && cur.value >= prev.value) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.slope >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        if evals >= MAX_EVALS {
            return Ok(None);
        }
        alpha = 2.0 * cur.alpha;
        prev = cur;
    }

    while evals < MAX_EVALS {
        let trial = if hi.value.is_finite() {
            interpolate(&lo, &hi)
        } else {
            0.5 * (lo.alpha + hi.alpha)
        };
        if (trial - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1.0) {
            break;
        }
        let cur = probe(trial)?;
        evals += 1;
        if !cur.value.is_finite() || !armijo(&cur) || cur.value >= lo.value {
            hi = cur;
            continue;
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
            hi = lo;
        }
        lo = cur;
    }
    // Budget exhausted: accept the best point with sufficient decrease.
    if lo.alpha > 0.0 && !lo.grad.is_empty() {
        return Ok(Some(lo));
    }
    Ok(None)
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    opts.validate()?;
    let started = Instant::now();
    let mut x = x0;
    let (mut value, mut grad) = f(&x)?;
    let mut trace = vec![LbfgsStep {
        value,
        grad_norm: inf_norm(&grad),
        step_length: 0.0,
    }];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let status = loop {
        if inf_norm(&grad) <= opts.grad_tol {
            break LbfgsStatus::Converged;
        }
        if iterations >= opts.max_iters {
            break LbfgsStatus::MaxIters;
        }
        if started.elapsed().as_secs_f64() > opts.max_wall_seconds {
            break LbfgsStatus::TimeLimit;
        }
        let mut dir = direction(&grad, &pairs);
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &dir);
        }
        let alpha_init = if pairs.is_empty() {
            (1.0 / inf_norm(&grad)).min(1.0)
        } else {
            1.0
        };
        let Some(accepted) = line_search(&mut f, &x, value, slope, &dir, alpha_init, opts)? else {
            if pairs.is_empty() {
                break LbfgsStatus::LineSearchFailure;
            }
            pairs.clear();
            continue;
        };
        let s: Vec<f64> = accepted.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = accepted.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = accepted.x;
        value = accepted.value;
        grad = accepted.grad;
        iterations += 1;
        trace.push(LbfgsStep {
            value,
            grad_norm: inf_norm(&grad),
            step_length: accepted.alpha,
        });
        log::debug!(
            "lbfgs iter {iterations}: f = {value:.12e}, |g| = {:.3e}, step = {:.3e}",
            inf_norm(&grad),
            accepted.alpha
        );
    };
    Ok(LbfgsResult {
        x,
        value,
        gradient: grad,
        iterations,
        status,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((v, g))
    }

    #[test]
    fn minimizes_rosenbrock() {
        let res = minimize(rosenbrock, vec![-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        assert_eq!(res.status, LbfgsStatus::Converged);
        assert!((res.x[0] - 1.0).abs() < 1e-5 && (res.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn trace_decreases() {
        let res = minimize(rosenbrock, vec![-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
        assert_eq!(res.trace.len(), res.iterations + 1);
    }

    #[test]
    fn quadratic_exact_minimizer() {
        // f = ½ xᵀ diag(1..6) x - Σ x, minimizer x_i = 1/i.
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut v = 0.0;
            let mut g = vec![0.0; x.len()];
            for (i, xi) in x.iter().enumerate() {
                let d = (i + 1) as f64;
                v += 0.5 * d * xi * xi - xi;
                g[i] = d * xi - 1.0;
            }
            Ok((v, g))
        };
        let res = minimize(f, vec![0.0; 6], &LbfgsOptions::default()).unwrap();
        assert_eq!(res.status, LbfgsStatus::Converged);
        for (i, xi) in res.x.iter().enumerate() {
            assert!((xi - 1.0 / (i + 1) as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((x[0] * x[0], vec![2.0 * x[0]])) };
        let res = minimize(f, vec![0.0], &LbfgsOptions::default()).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.status, LbfgsStatus::Converged);
    }

    #[test]
    fn iteration_limit() {
        let opts = LbfgsOptions {
            max_iters: 2,
            ..Default::default()
        };
        let res = minimize(rosenbrock, vec![-1.2, 1.0], &opts).unwrap();
        assert_eq!(res.status, LbfgsStatus::MaxIters);
        assert_eq!(res.iterations, 2);
    }

    #[test]
    fn rejects_bad_constants() {
        let opts = LbfgsOptions {
            c1: 0.95,
            ..Default::default()
        };
        assert!(minimize(rosenbrock, vec![0.0, 0.0], &opts).is_err());
    }
}
