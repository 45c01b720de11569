//! Direct policy optimization: L-BFGS ascent on the exact reward of a
//! tabular softmax policy.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::lbfgs::{self, LbfgsOptions, LbfgsStatus};
use crate::error::{Error, Result};
use crate::model::{
    compose_policy, reward_of_policy, state_occupancy, state_values, ObservationPolicy,
    PomdpModel,
};
use crate::nlp::SolveStatus;

/// Softmax logits `θ[o][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    pub theta: Vec<Vec<f64>>,
}

impl SoftmaxParams {
    pub fn zeros(n_obs: usize, n_actions: usize) -> Self {
        Self {
            theta: vec![vec![0.0; n_actions]; n_obs],
        }
    }

    pub fn from_flat(n_obs: usize, n_actions: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != n_obs * n_actions {
            return Err(Error::DimensionMismatch {
                what: "softmax parameters",
                expected: n_obs * n_actions,
                got: flat.len(),
            });
        }
        Ok(Self {
            theta: flat.chunks(n_actions).map(<[f64]>::to_vec).collect(),
        })
    }

    pub fn flat(&self) -> Vec<f64> {
        self.theta.concat()
    }

    pub fn policy(&self) -> Result<ObservationPolicy> {
        if self.theta.iter().flatten().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("softmax parameters must be finite".into()));
        }
        let rows = self
            .theta
            .iter()
            .map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.iter().map(|t| (t - max).exp()).collect()
            })
            .collect();
        ObservationPolicy::new_normalized(rows)
    }
}

/// Reward and its gradient with respect to `θ`.
///
/// With `d` the discounted state marginal and `V` the normalized values of
/// `π_θ`, the derivative with respect to the policy entry `π(a|o)` is
/// `Σ_{s ∈ S_o} d(s) q(s,a) / (1-γ)` where
/// `q(s,a) = (1-γ) r(s,a) + γ Σ_{s'} α(s'|s,a) V(s')`. The softmax Jacobian
/// then gives `∂R/∂θ[o][a] = π(a|o) (G[o][a] - Σ_b π(b|o) G[o][b])`.
pub fn dpo_reward_and_gradient(
    model: &PomdpModel,
    params: &SoftmaxParams,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (no, na) = (model.n_obs(), model.n_actions());
    if params.theta.len() != no || params.theta.iter().any(|r| r.len() != na) {
        return Err(Error::DimensionMismatch {
            what: "softmax parameters",
            expected: no * na,
            got: params.theta.iter().map(Vec::len).sum(),
        });
    }
    let pi = params.policy()?;
    let tau = compose_policy(model, &pi)?;
    let d = state_occupancy(model, &tau)?;
    let v = state_values(model, &tau)?;
    let gamma = model.gamma();
    let reward: f64 = model.mu().iter().zip(&v).map(|(m, v)| m * v).sum();

    let mut g = vec![vec![0.0; na]; no];
    for (s, &ds) in d.iter().enumerate() {
        if ds == 0.0 {
            continue;
        }
        let o = model.obs_of(s);
        for (a, ga) in g[o].iter_mut().enumerate() {
            let future: f64 = model
                .alpha_row(s, a)
                .iter()
                .zip(&v)
                .map(|(p, vs)| p * vs)
                .sum();
            let q = (1.0 - gamma) * model.reward(s, a) + gamma * future;
            *ga += ds * q / (1.0 - gamma);
        }
    }
    let grad = g
        .iter()
        .enumerate()
        .map(|(o, row)| {
            let p = pi.row(o);
            let mean: f64 = p.iter().zip(row).map(|(pa, ga)| pa * ga).sum();
            p.iter().zip(row).map(|(pa, ga)| pa * (ga - mean)).collect()
        })
        .collect();
    Ok((reward, grad))
}

/// Exact gradient `∂R(π_θ)/∂θ` over `O × A`.
pub fn dpo_gradient(model: &PomdpModel, params: &SoftmaxParams) -> Result<Vec<Vec<f64>>> {
    Ok(dpo_reward_and_gradient(model, params)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DpoOptions {
    pub lbfgs: LbfgsOptions,
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoTraceEntry {
    pub iteration: usize,
    pub reward: f64,
    pub grad_norm: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoResult {
    pub policy: ObservationPolicy,
    /// Exactly re-evaluated reward of `policy`.
    pub reward: f64,
    pub params: SoftmaxParams,
    pub status: SolveStatus,
    pub iterations: usize,
    pub grad_norm: f64,
    pub trace: Vec<DpoTraceEntry>,
    pub wall_seconds: f64,
}

/// Maximizes `R(π_θ)` from `θ = 0`.
pub fn dpo_solve(model: &PomdpModel, options: &DpoOptions) -> Result<DpoResult> {
    let started = Instant::now();
    let (no, na) = (model.n_obs(), model.n_actions());
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let params = SoftmaxParams::from_flat(no, na, x)?;
        let (r, g) = dpo_reward_and_gradient(model, &params)?;
        Ok((-r, g.concat().into_iter().map(|v| -v).collect()))
    };
    let res = lbfgs::minimize(objective, vec![0.0; no * na], &options.lbfgs)?;
    let params = SoftmaxParams::from_flat(no, na, &res.x)?;
    let policy = params.policy()?;
    let reward = reward_of_policy(model, &policy)?;
    let status = match res.status {
        LbfgsStatus::Converged => SolveStatus::Converged,
        LbfgsStatus::MaxIters => SolveStatus::MaxIters,
        LbfgsStatus::LineSearchFailure => SolveStatus::LineSearchFailure,
        LbfgsStatus::TimeLimit => SolveStatus::TimeLimit,
    };
    let trace = res
        .trace
        .iter()
        .enumerate()
        .map(|(i, t)| DpoTraceEntry {
            iteration: i,
            reward: -t.value,
            grad_norm: t.grad_norm,
            step_length: t.step_length,
        })
        .collect();
    Ok(DpoResult {
        policy,
        reward,
        params,
        status,
        iterations: res.iterations,
        grad_norm: res.gradient.iter().fold(0.0, |m, g| m.max(g.abs())),
        trace,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Writes the trace as CSV with header `iteration,reward,grad_norm,step_length`.
pub fn write_trace_csv<W: Write>(trace: &[DpoTraceEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::*;

    fn random_params(rng: &mut TestRng, no: usize, na: usize) -> SoftmaxParams {
        SoftmaxParams {
            theta: (0..no)
                .map(|_| (0..na).map(|_| 2.0 * rng.uniform() - 1.0).collect())
                .collect(),
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..10 {
            let mut rng = TestRng::new(seed);
            let model = random_model(&mut rng, 3, 2, 3, 0.9);
            let params = random_params(&mut rng, 2, 3);
            let grad = dpo_gradient(&model, &params).unwrap();
            let h = 1e-6;
            for o in 0..2 {
                for a in 0..3 {
                    let mut plus = params.clone();
                    plus.theta[o][a] += h;
                    let mut minus = params.clone();
                    minus.theta[o][a] -= h;
                    let fd = (reward_of_policy(&model, &plus.policy().unwrap()).unwrap()
                        - reward_of_policy(&model, &minus.policy().unwrap()).unwrap())
                        / (2.0 * h);
                    let scale = grad[o][a].abs().max(1e-3);
                    assert!((fd - grad[o][a]).abs() / scale < 1e-6, "seed {seed}: {fd} vs {}", grad[o][a]);
                }
            }
        }
    }

    #[test]
    fn constant_reward_gives_zero_gradient() {
        let mut rng = TestRng::new(5);
        let base = random_model(&mut rng, 4, 2, 3, 0.9);
        let model = PomdpModel::new(
            2,
            base.alpha_nested(),
            base.observation_map().to_vec(),
            vec![vec![1.7; 3]; 4],
            base.mu().to_vec(),
            0.9,
        )
        .unwrap();
        let grad = dpo_gradient(&model, &random_params(&mut rng, 2, 3)).unwrap();
        assert!(grad.iter().flatten().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = TestRng::new(8);
        let model = random_model(&mut rng, 5, 3, 4, 0.95);
        let grad = dpo_gradient(&model, &random_params(&mut rng, 3, 4)).unwrap();
        for row in grad {
            assert!(row.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn symmetric_actions_keep_uniform_policy() {
        let model = PomdpModel::new(
            1,
            vec![vec![vec![0.5, 0.5]; 2], vec![vec![0.3, 0.7]; 2]],
            vec![0, 0],
            vec![vec![1.0, 1.0], vec![0.0, 0.0]],
            vec![0.5, 0.5],
            0.9,
        )
        .unwrap();
        let g = dpo_gradient(&model, &SoftmaxParams::zeros(1, 2)).unwrap();
        assert!(g[0].iter().all(|v| v.abs() < 1e-14));
        let res = dpo_solve(&model, &DpoOptions::default()).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.policy.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn trace_is_monotone_and_reward_exact() {
        let mut rng = TestRng::new(21);
        let model = random_model(&mut rng, 6, 3, 3, 0.95);
        let res = dpo_solve(&model, &DpoOptions::default()).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1].reward >= w[0].reward - 1e-12);
        }
        let exact = reward_of_policy(&model, &res.policy).unwrap();
        assert!((exact - res.reward).abs() < 1e-12);
        assert!((res.trace.last().unwrap().reward - res.reward).abs() < 1e-9);
    }

    #[test]
    fn trace_csv_has_header() {
        let trace = vec![DpoTraceEntry {
            iteration: 0,
            reward: 1.5,
            grad_norm: 0.25,
            step_length: 0.0,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,reward,grad_norm,step_length\n0,1.5,0.25,0.0"));
    }
}
