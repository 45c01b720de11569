//! Bellman-constrained programming: joint optimization over the policy and
//! its normalized values, with the evaluation equation as bilinear
//! equality constraints.
//!
//! Variables are `π[o][a]` (row-major, first `|O||A|` entries) followed by
//! `v[s]`. For every state `s` with observation `o = obs_of(s)`,
//!
//! ```text
//! v_s - γ Σ_a π[o][a] Σ_{s'} α(s'|s,a) v_{s'} - (1-γ) Σ_a r(s,a) π[o][a] = 0
//! ```
//!
//! and every row of `π` sums to one with nonnegative entries.

use std::sync::Arc;
use std::time::Instant;

use crate::constraints::LinearEquality;
use crate::error::Result;
use crate::model::{compose_policy, reward_of_policy, state_values, ObservationPolicy, PomdpModel};
use crate::nlp::{self, NlpProblem, NlpSolution, QuadraticConstraint, SmoothEquality, SolveOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct BcpResult {
    pub policy: ObservationPolicy,
    /// Exactly re-evaluated reward of `policy`.
    pub reward: f64,
    pub values: Vec<f64>,
    pub solver: NlpSolution,
    pub wall_seconds: f64,
}

/// The program with start point `(π, V^π)`.
pub fn build_bcp_program(model: &PomdpModel, start: &ObservationPolicy) -> Result<NlpProblem> {
    let (ns, no, na) = (model.n_states(), model.n_obs(), model.n_actions());
    let gamma = model.gamma();
    let pi_var = |o: usize, a: usize| o * na + a;
    let v_var = |s: usize| no * na + s;
    let n_vars = no * na + ns;

    let bellman: Vec<Arc<dyn SmoothEquality>> = (0..ns)
        .map(|s| {
            let o = model.obs_of(s);
            let mut g = QuadraticConstraint {
                constant: 0.0,
                linear: vec![(v_var(s), 1.0)],
                quadratic: Vec::new(),
            };
            for a in 0..na {
                let r = model.reward(s, a);
                if r != 0.0 {
                    g.linear.push((pi_var(o, a), -(1.0 - gamma) * r));
                }
                for (s2, &p) in model.alpha_row(s, a).iter().enumerate() {
                    if p != 0.0 {
                        g.quadratic.push((pi_var(o, a), v_var(s2), -gamma * p));
                    }
                }
            }
            Arc::new(g) as Arc<dyn SmoothEquality>
        })
        .collect();
    let simplex = (0..no)
        .map(|o| LinearEquality::new((0..na).map(|a| (pi_var(o, a), 1.0)).collect(), -1.0))
        .collect::<Result<Vec<_>>>()?;
    let objective = model
        .mu()
        .iter()
        .enumerate()
        .filter(|(_, m)| **m != 0.0)
        .map(|(s, m)| (v_var(s), *m))
        .collect();
    let mut lower_bounds = vec![0.0; no * na];
    lower_bounds.resize(n_vars, f64::NEG_INFINITY);
    let tau = compose_policy(model, start)?;
    let mut x0 = start.as_flat().to_vec();
    x0.extend(state_values(model, &tau)?);
    NlpProblem::new(n_vars, objective, simplex, bellman, lower_bounds, x0)
}

/// Solves the Bellman-constrained program from the uniform policy.
pub fn bcp_solve(model: &PomdpModel, options: &SolveOptions) -> Result<BcpResult> {
    let started = Instant::now();
    let (no, na) = (model.n_obs(), model.n_actions());
    let problem = build_bcp_program(model, &ObservationPolicy::uniform(no, na))?;
    let solver = nlp::solve(&problem, options)?;
    let policy = ObservationPolicy::from_flat_clamped(no, na, &solver.x[..no * na])?;
    let reward = reward_of_policy(model, &policy)?;
    Ok(BcpResult {
        policy,
        reward,
        values: solver.x[no * na..].to_vec(),
        solver,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::*;
    use crate::nlp::SolveStatus;

    #[test]
    fn single_state_single_action() {
        let model = PomdpModel::new(1, vec![vec![vec![1.0]]], vec![0], vec![vec![-0.75]], vec![1.0], 0.95).unwrap();
        let res = bcp_solve(&model, &SolveOptions::default()).unwrap();
        assert!((res.reward + 0.75).abs() < 1e-12);
        assert!((res.values[0] + 0.75).abs() < 1e-8);
    }

    #[test]
    fn start_point_is_feasible() {
        for seed in 0..5 {
            let mut rng = TestRng::new(seed);
            let model = random_model(&mut rng, 6, 3, 3, 0.99);
            let problem = build_bcp_program(&model, &ObservationPolicy::uniform(3, 3)).unwrap();
            let worst = problem
                .constraint_values(&problem.start_point)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst < 1e-12, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn converges_with_exact_reward() {
        let mut rng = TestRng::new(13);
        let model = random_model(&mut rng, 5, 2, 3, 0.9);
        let res = bcp_solve(&model, &SolveOptions::default()).unwrap();
        assert_eq!(res.solver.status, SolveStatus::Converged);
        assert!((res.reward - reward_of_policy(&model, &res.policy).unwrap()).abs() < 1e-12);
        let objective: f64 = model.mu().iter().zip(&res.values).map(|(m, v)| m * v).sum();
        assert!((objective - res.reward).abs() < 1e-6);
        let uniform = reward_of_policy(&model, &ObservationPolicy::uniform(2, 3)).unwrap();
        assert!(res.reward >= uniform - 1e-9);
    }
}
