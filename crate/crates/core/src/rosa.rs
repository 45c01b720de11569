//! Reward optimization in state-action space.
//!
//! The reward `⟨r, η⟩` is maximized over the feasible frequencies of the
//! POMDP, described explicitly by [`ConstraintSystem`]. The optimal
//! frequency is then conditioned into a state policy, and the observation
//! policy is read off class by class.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintCounts, ConstraintSystem, Residuals};
use crate::error::{Error, Result};
use crate::model::{
    condition_frequency, reward_of_policy, state_action_frequency, ObservationPolicy,
    PomdpModel, StateActionFrequency, StatePolicy,
};
use crate::nlp::{self, NlpProblem, NlpSolution, SmoothEquality, SolveOptions, SolveStatus};

/// Relative tolerance of the reward self-consistency check.
pub const REWARD_GAP_TOL: f64 = 1e-6;

/// Multiple of `kkt_tol` accepted for constraint residuals at `η*`.
pub const RESIDUAL_FACTOR: f64 = 10.0;

/// Settings for [`rosa_solve_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RosaOptions {
    pub solver: SolveOptions,
    /// Number of starts; the first is always the uniform policy.
    pub restarts: usize,
    /// Seed of the start perturbations.
    pub seed: u64,
}

impl Default for RosaOptions {
    fn default() -> Self {
        Self {
            solver: SolveOptions::default(),
            restarts: 1,
            seed: 0,
        }
    }
}

/// Independent check of a ROSA result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub residuals: Residuals,
    /// `|⟨r, η*⟩ - R(π*)|`.
    pub reward_gap: f64,
    /// Smallest state marginal of `η*`.
    pub min_marginal: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RosaResult {
    pub eta_star: StateActionFrequency,
    pub reward_star: f64,
    pub state_policy: StatePolicy,
    pub obs_policy: ObservationPolicy,
    pub solver: NlpSolution,
    pub certificate: Certificate,
    pub counts: ConstraintCounts,
    /// Index of the start that produced the result.
    pub start_index: usize,
    /// Wall time including constraint construction.
    pub wall_seconds: f64,
}

/// Assembles the polynomial program for `system`, starting at `start`.
pub fn build_program(
    model: &PomdpModel,
    system: &ConstraintSystem,
    start: &StateActionFrequency,
) -> Result<NlpProblem> {
    let objective = model
        .reward_vector()
        .iter()
        .enumerate()
        .filter(|(_, r)| **r != 0.0)
        .map(|(i, r)| (i, *r))
        .collect();
    let smooth: Vec<Arc<dyn SmoothEquality>> = system
        .quadratic
        .iter()
        .map(|q| Arc::new(q.clone()) as Arc<dyn SmoothEquality>)
        .collect();
    NlpProblem::new(
        system.n_vars,
        objective,
        system.linear.clone(),
        smooth,
        vec![0.0; system.n_vars],
        start.as_flat().to_vec(),
    )
}

/// Observation policy from a state policy: for each observation the rows of
/// its states are averaged with weights proportional to their marginal
/// frequency, then renormalized.
pub fn recover_observation_policy(
    model: &PomdpModel,
    tau: &StatePolicy,
    eta: &StateActionFrequency,
) -> Result<ObservationPolicy> {
    let na = model.n_actions();
    if tau.n_states() != model.n_states() || eta.n_states() != model.n_states() {
        return Err(Error::DimensionMismatch {
            what: "recovery states",
            expected: model.n_states(),
            got: tau.n_states().min(eta.n_states()),
        });
    }
    let rows = model
        .observation_classes()
        .iter()
        .enumerate()
        .map(|(o, class)| {
            let weight: f64 = class.iter().map(|&s| eta.marginal(s)).sum();
            if !(weight > 0.0) {
                return Err(Error::DegenerateObservationClass { obs: o });
            }
            let mut row = vec![0.0; na];
            for &s in class {
                let w = eta.marginal(s) / weight;
                for (r, t) in row.iter_mut().zip(tau.row(s)) {
                    *r += w * t;
                }
            }
            let total: f64 = row.iter().sum();
            Ok(row.into_iter().map(|p| p / total).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    ObservationPolicy::new_normalized(rows)
}

fn start_policy(model: &PomdpModel, index: usize, seed: u64) -> ObservationPolicy {
    if index == 0 {
        return ObservationPolicy::uniform(model.n_obs(), model.n_actions());
    }
    let mut state = seed ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    let rows = (0..model.n_obs())
        .map(|_| {
            (0..model.n_actions())
                .map(|_| (2.0 * nlp::unit_interval(&mut state)).exp())
                .collect()
        })
        .collect();
    ObservationPolicy::new_normalized(rows).expect("positive rows normalize")
}

/// Single-start ROSA from the uniform policy.
pub fn rosa_solve(model: &PomdpModel, options: &SolveOptions) -> Result<RosaResult> {
    rosa_solve_with(
        model,
        &RosaOptions {
            solver: *options,
            ..Default::default()
        },
    )
}

/// ROSA with optional restarts. Restarts begin at the frequencies of
/// seed-derived random policies, so every start is feasible. The best
/// certified result wins, ties going to the lower start index.
pub fn rosa_solve_with(model: &PomdpModel, options: &RosaOptions) -> Result<RosaResult> {
    options.solver.validate()?;
    let started = Instant::now();
    let system = ConstraintSystem::build(model)?;
    let results: Vec<Result<RosaResult>> = (0..options.restarts.max(1))
        .into_par_iter()
        .map(|k| {
            let pi0 = start_policy(model, k, options.seed);
            let start = state_action_frequency(model, &pi0)?;
            let mut result = solve_from(model, &system, &start, &options.solver)?;
            result.start_index = k;
            Ok(result)
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let (_, mut best) = nlp::select_best(results, |r| (r.certificate.certified, r.reward_star))
        .expect("at least one start");
    best.wall_seconds = started.elapsed().as_secs_f64();
    Ok(best)
}

fn solve_from(
    model: &PomdpModel,
    system: &ConstraintSystem,
    start: &StateActionFrequency,
    options: &SolveOptions,
) -> Result<RosaResult> {
    let started = Instant::now();
    let problem = build_program(model, system, start)?;
    let solution = nlp::solve(&problem, options)?;
    let eta_star = StateActionFrequency::from_flat(
        model.n_states(),
        model.n_actions(),
        solution.x.iter().map(|v| v.max(0.0)).collect(),
    )?;
    let reward_star = eta_star.dot(model.reward_vector());
    let state_policy = condition_frequency(&eta_star)?;
    let obs_policy = recover_observation_policy(model, &state_policy, &eta_star)?;

    let residuals = system.residuals(&eta_star)?;
    let policy_reward = reward_of_policy(model, &obs_policy)?;
    let reward_gap = (reward_star - policy_reward).abs();
    let min_marginal = (0..model.n_states())
        .map(|s| eta_star.marginal(s))
        .fold(f64::INFINITY, f64::min);
    let residual_tol = RESIDUAL_FACTOR * options.kkt_tol;
    let certified = solution.status == SolveStatus::Converged
        && residuals.max_linear <= residual_tol
        && residuals.max_quadratic <= residual_tol
        && residuals.min_entry >= 0.0
        && reward_gap <= REWARD_GAP_TOL * (1.0 + policy_reward.abs());

    Ok(RosaResult {
        eta_star,
        reward_star,
        state_policy,
        obs_policy,
        solver: solution,
        certificate: Certificate {
            residuals,
            reward_gap,
            min_marginal,
            certified,
        },
        counts: system.counts(),
        start_index: 0,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
