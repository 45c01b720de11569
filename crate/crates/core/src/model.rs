//! Finite POMDPs with deterministic observations, memoryless policies and
//! exact discounted evaluation.
//!
//! Rewards follow the normalized convention
//! `R(π) = E[(1-γ) Σ_t γ^t r(s_t, a_t)] = ⟨r, η^π⟩`, where `η^π` is the
//! discounted state-action frequency. The initial action is drawn from the
//! effective state policy at the initial state.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance used when validating probability vectors.
pub const PROB_TOL: f64 = 1e-12;

/// Largest negative entry of a computed frequency that is treated as rounding noise.
pub const CLAMP_TOL: f64 = 1e-12;

const OCCUPANCY_REFINEMENTS: usize = 2;

/// Allowed deviation of `Σ η` from one beyond what inexact inputs explain.
const FREQUENCY_SUM_TOL: f64 = 1e-9;

/// A finite POMDP `(S, O, A, α, β, r, μ, γ)` whose observation mechanism is a
/// deterministic map from states to observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PomdpModel {
    n_states: usize,
    n_obs: usize,
    n_actions: usize,
    /// `alpha[(s * n_actions + a) * n_states + s2] = α(s2 | s, a)`.
    alpha: Vec<f64>,
    obs_of: Vec<usize>,
    /// `reward[s * n_actions + a]`.
    reward: Vec<f64>,
    mu: Vec<f64>,
    gamma: f64,
}

impl PomdpModel {
    /// Builds a validated model. Probability rows must already sum to one
    /// within [`PROB_TOL`].
    pub fn new(
        n_obs: usize,
        alpha: Vec<Vec<Vec<f64>>>,
        obs_of: Vec<usize>,
        reward: Vec<Vec<f64>>,
        mu: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        Self::build(n_obs, alpha, obs_of, reward, mu, gamma, false)
    }

    /// Like [`PomdpModel::new`] but rescales every nonnegative transition row
    /// and `mu` to sum to one instead of rejecting them.
    pub fn new_normalized(
        n_obs: usize,
        alpha: Vec<Vec<Vec<f64>>>,
        obs_of: Vec<usize>,
        reward: Vec<Vec<f64>>,
        mu: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        Self::build(n_obs, alpha, obs_of, reward, mu, gamma, true)
    }

    /// Builds a model from an observation matrix `beta[s][o] = β(o|s)`. Only
    /// deterministic mechanisms (0/1 rows) are accepted.
    pub fn from_observation_matrix(
        alpha: Vec<Vec<Vec<f64>>>,
        beta: &[Vec<f64>],
        reward: Vec<Vec<f64>>,
        mu: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let n_obs = beta.first().map_or(0, Vec::len);
        let mut obs_of = Vec::with_capacity(beta.len());
        for (s, row) in beta.iter().enumerate() {
            if row.len() != n_obs {
                return Err(Error::DimensionMismatch {
                    what: "observation matrix row",
                    expected: n_obs,
                    got: row.len(),
                });
            }
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &p)| (p - 1.0).abs() <= PROB_TOL)
                .map(|(o, _)| o)
                .collect();
            let rest_zero = row
                .iter()
                .enumerate()
                .all(|(o, &p)| ones.contains(&o) || p.abs() <= PROB_TOL);
            if ones.len() != 1 || !rest_zero {
                return Err(Error::StochasticObservation(s));
            }
            obs_of.push(ones[0]);
        }
        Self::new(n_obs, alpha, obs_of, reward, mu, gamma)
    }

    fn build(
        n_obs: usize,
        alpha: Vec<Vec<Vec<f64>>>,
        obs_of: Vec<usize>,
        reward: Vec<Vec<f64>>,
        mut mu: Vec<f64>,
        gamma: f64,
        normalize: bool,
    ) -> Result<Self> {
        let n_states = alpha.len();
        if n_states == 0 {
            return Err(Error::InvalidInput("model has no states".into()));
        }
        let n_actions = alpha[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidInput("model has no actions".into()));
        }
        if n_obs == 0 {
            return Err(Error::InvalidInput("model has no observations".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!(
                "discount factor {gamma} is not in (0, 1)"
            )));
        }
        check_len("obs_of", n_states, obs_of.len())?;
        check_len("reward", n_states, reward.len())?;
        check_len("mu", n_states, mu.len())?;

        let mut flat_alpha = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in alpha.into_iter().enumerate() {
            check_len("alpha actions", n_actions, per_action.len())?;
            for (a, mut row) in per_action.into_iter().enumerate() {
                check_len("alpha row", n_states, row.len())?;
                validate_distribution(&mut row, "alpha", s * n_actions + a, normalize)?;
                flat_alpha.extend(row);
            }
        }
        validate_distribution(&mut mu, "mu", 0, normalize)?;

        let mut flat_reward = Vec::with_capacity(n_states * n_actions);
        for row in reward {
            check_len("reward row", n_actions, row.len())?;
            if row.iter().any(|r| !r.is_finite()) {
                return Err(Error::InvalidInput("reward entries must be finite".into()));
            }
            flat_reward.extend(row);
        }

        let mut attained = vec![false; n_obs];
        for (s, &o) in obs_of.iter().enumerate() {
            if o >= n_obs {
                return Err(Error::InvalidInput(format!(
                    "state {s} maps to observation {o} but n_obs = {n_obs}"
                )));
            }
            attained[o] = true;
        }
        if let Some(o) = attained.iter().position(|&hit| !hit) {
            return Err(Error::EmptyObservationClass(o));
        }

        Ok(Self {
            n_states,
            n_obs,
            n_actions,
            alpha: flat_alpha,
            obs_of,
            reward: flat_reward,
            mu,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of state-action pairs, i.e. the dimension of `η`.
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Row-major index of the pair `(s, a)`.
    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// `α(s2 | s, a)`.
    #[inline]
    pub fn alpha(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.alpha[(s * self.n_actions + a) * self.n_states + s2]
    }

    /// Distribution over successor states after taking `a` in `s`.
    #[inline]
    pub fn alpha_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.alpha[start..start + self.n_states]
    }

    pub fn obs_of(&self, s: usize) -> usize {
        self.obs_of[s]
    }

    pub fn observation_map(&self) -> &[usize] {
        &self.obs_of
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Rewards as a flat vector indexed by [`PomdpModel::pair`].
    pub fn reward_vector(&self) -> &[f64] {
        &self.reward
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// States grouped by observation, each class in increasing state order.
    pub fn observation_classes(&self) -> Vec<Vec<usize>> {
        let mut classes = vec![Vec::new(); self.n_obs];
        for (s, &o) in self.obs_of.iter().enumerate() {
            classes[o].push(s);
        }
        classes
    }

    /// Copy of the model with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!(
                "discount factor {gamma} is not in (0, 1)"
            )));
        }
        Ok(Self {
            gamma,
            ..self.clone()
        })
    }

    /// Copy of the model with `shift` added to every reward.
    pub fn with_reward_shift(&self, shift: f64) -> Self {
        Self {
            reward: self.reward.iter().map(|r| r + shift).collect(),
            ..self.clone()
        }
    }

    /// Transition tensor in nested `[s][a][s2]` layout.
    pub fn alpha_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| self.alpha_row(s, a).to_vec())
                    .collect()
            })
            .collect()
    }

    /// Rewards in nested `[s][a]` layout.
    pub fn reward_nested(&self) -> Vec<Vec<f64>> {
        self.reward
            .chunks(self.n_actions)
            .map(<[f64]>::to_vec)
            .collect()
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

fn validate_distribution(
    row: &mut [f64],
    what: &'static str,
    index: usize,
    normalize: bool,
) -> Result<()> {
    let sum: f64 = row.iter().sum();
    let nonneg = row.iter().all(|p| p.is_finite() && *p >= 0.0);
    if !nonneg {
        return Err(Error::NotStochastic {
            what,
            row: index,
            sum,
        });
    }
    if normalize && sum > 0.0 {
        if sum != 1.0 {
            row.iter_mut().for_each(|p| *p /= sum);
        }
        return Ok(());
    }
    if (sum - 1.0).abs() <= PROB_TOL {
        return Ok(());
    }
    Err(Error::NotStochastic {
        what,
        row: index,
        sum,
    })
}

/// Row-stochastic matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
struct Kernel {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Kernel {
    fn from_rows(what: &'static str, rows: Vec<Vec<f64>>, normalize: bool) -> Result<Self> {
        let n_rows = rows.len();
        if n_rows == 0 {
            return Err(Error::InvalidInput(format!("{what} has no rows")));
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err(Error::InvalidInput(format!("{what} has no columns")));
        }
        let mut data = Vec::with_capacity(n_rows * cols);
        for (i, mut row) in rows.into_iter().enumerate() {
            check_len(what, cols, row.len())?;
            validate_distribution(&mut row, what, i, normalize)?;
            data.extend(row);
        }
        Ok(Self {
            rows: n_rows,
            cols,
            data,
        })
    }

    fn uniform(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![1.0 / cols as f64; rows * cols],
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn nested(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }
}

/// A memoryless stochastic policy `π(a | o)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPolicy(Kernel);

impl ObservationPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        Kernel::from_rows("observation policy", rows, false).map(Self)
    }

    pub fn new_normalized(rows: Vec<Vec<f64>>) -> Result<Self> {
        Kernel::from_rows("observation policy", rows, true).map(Self)
    }

    pub fn uniform(n_obs: usize, n_actions: usize) -> Self {
        Self(Kernel::uniform(n_obs, n_actions))
    }

    /// Builds the policy from flat row-major data, renormalizing each row
    /// exactly. Used by solvers whose iterates are probabilities up to
    /// rounding.
    pub fn from_flat_clamped(n_obs: usize, n_actions: usize, data: &[f64]) -> Result<Self> {
        let rows = data
            .chunks(n_actions)
            .take(n_obs)
            .map(|row| row.iter().map(|p| p.max(0.0)).collect())
            .collect();
        Self::new_normalized(rows)
    }

    pub fn n_obs(&self) -> usize {
        self.0.rows
    }

    pub fn n_actions(&self) -> usize {
        self.0.cols
    }

    pub fn row(&self, o: usize) -> &[f64] {
        self.0.row(o)
    }

    pub fn prob(&self, o: usize, a: usize) -> f64 {
        self.0.data[o * self.0.cols + a]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.nested()
    }
}

/// A state policy `τ(a | s)`, e.g. an effective policy `π∘β`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePolicy(Kernel);

impl StatePolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        Kernel::from_rows("state policy", rows, false).map(Self)
    }

    pub fn new_normalized(rows: Vec<Vec<f64>>) -> Result<Self> {
        Kernel::from_rows("state policy", rows, true).map(Self)
    }

    pub fn n_states(&self) -> usize {
        self.0.rows
    }

    pub fn n_actions(&self) -> usize {
        self.0.cols
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.0.row(s)
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.0.data[s * self.0.cols + a]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.nested()
    }
}

/// Discounted state-action frequency `η(s, a)`, stored row-major by `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionFrequency {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

impl StateActionFrequency {
    /// Wraps a nonnegative vector indexed by `s * n_actions + a`.
    pub fn from_flat(n_states: usize, n_actions: usize, data: Vec<f64>) -> Result<Self> {
        check_len("frequency vector", n_states * n_actions, data.len())?;
        if let Some(i) = data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "frequency entry {i} is negative or not finite ({})",
                data[i]
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            data,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_states * n_actions);
        for row in rows {
            check_len("frequency row", n_actions, row.len())?;
            data.extend(row);
        }
        Self::from_flat(n_states, n_actions, data)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.data[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// State marginal `Σ_a η(s, a)`.
    pub fn marginal(&self, s: usize) -> f64 {
        self.row(s).iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n_actions).map(<[f64]>::to_vec).collect()
    }

    /// `⟨r, η⟩`.
    pub fn dot(&self, values: &[f64]) -> f64 {
        self.data.iter().zip(values).map(|(e, r)| e * r).sum()
    }
}

fn check_policy(model: &PomdpModel, pi: &ObservationPolicy) -> Result<()> {
    check_len("policy observations", model.n_obs, pi.n_obs())?;
    check_len("policy actions", model.n_actions, pi.n_actions())
}

/// Effective state policy `(π∘β)(a|s) = π(a | obs_of[s])`.
pub fn compose_policy(model: &PomdpModel, pi: &ObservationPolicy) -> Result<StatePolicy> {
    check_policy(model, pi)?;
    let mut data = Vec::with_capacity(model.n_pairs());
    for s in 0..model.n_states {
        data.extend_from_slice(pi.row(model.obs_of[s]));
    }
    Ok(StatePolicy(Kernel {
        rows: model.n_states,
        cols: model.n_actions,
        data,
    }))
}

/// Transition kernel of the Markov chain on state-action pairs,
/// `P_π((s,a) → (s2,a2)) = α(s2|s,a) π(a2 | obs_of[s2])`.
pub fn transition_kernel(model: &PomdpModel, pi: &ObservationPolicy) -> Result<DMatrix<f64>> {
    check_policy(model, pi)?;
    let n = model.n_pairs();
    let na = model.n_actions;
    let mut kernel = DMatrix::zeros(n, n);
    for s in 0..model.n_states {
        for a in 0..na {
            let row = model.pair(s, a);
            for (s2, &p) in model.alpha_row(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (a2, &q) in pi.row(model.obs_of[s2]).iter().enumerate() {
                    kernel[(row, model.pair(s2, a2))] = p * q;
                }
            }
        }
    }
    Ok(kernel)
}

/// State-to-state kernel `P_τ(s2|s) = Σ_a τ(a|s) α(s2|s,a)`.
pub fn state_kernel(model: &PomdpModel, tau: &StatePolicy) -> DMatrix<f64> {
    let ns = model.n_states;
    let mut p = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for (a, &t) in tau.row(s).iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            for (s2, &q) in model.alpha_row(s, a).iter().enumerate() {
                p[(s, s2)] += t * q;
            }
        }
    }
    p
}

fn check_state_policy(model: &PomdpModel, tau: &StatePolicy) -> Result<()> {
    check_len("state policy states", model.n_states, tau.n_states())?;
    check_len("state policy actions", model.n_actions, tau.n_actions())
}

/// Discounted state marginal `d = (1-γ)(I - γ P_τᵀ)⁻¹ μ`.
pub fn state_occupancy(model: &PomdpModel, tau: &StatePolicy) -> Result<Vec<f64>> {
    check_state_policy(model, tau)?;
    let ns = model.n_states;
    let gamma = model.gamma;
    let p = state_kernel(model, tau);
    let system = DMatrix::identity(ns, ns) - p.transpose() * gamma;
    let rhs = DVector::from_iterator(ns, model.mu.iter().map(|m| (1.0 - gamma) * m));
    let lu = system.clone().lu();
    let singular = || Error::Numerical("occupancy system is singular".into());
    let mut d = lu.solve(&rhs).ok_or_else(singular)?;
    // The total mass error is 1ᵀ(rhs - A d) / (1-γ), so residuals matter
    // more than the conditioning of A as γ → 1.
    for _ in 0..OCCUPANCY_REFINEMENTS {
        let residual = &rhs - &system * &d;
        d += lu.solve(&residual).ok_or_else(singular)?;
    }
    let mut out = Vec::with_capacity(ns);
    for (s, &v) in d.iter().enumerate() {
        if v < -CLAMP_TOL || !v.is_finite() {
            return Err(Error::Numerical(format!(
                "occupancy of state {s} is {v}, below the clamp tolerance"
            )));
        }
        out.push(v.max(0.0));
    }
    Ok(out)
}

/// Discounted state-action frequency of an arbitrary state policy.
pub fn frequency_of_state_policy(
    model: &PomdpModel,
    tau: &StatePolicy,
) -> Result<StateActionFrequency> {
    let d = state_occupancy(model, tau)?;
    let mut data = Vec::with_capacity(model.n_pairs());
    for (s, ds) in d.iter().enumerate() {
        data.extend(tau.row(s).iter().map(|t| ds * t));
    }
    let freq = StateActionFrequency {
        n_states: model.n_states,
        n_actions: model.n_actions,
        data,
    };
    // Rows accepted within PROB_TOL leak mass at rate |ΣP - 1|, which the
    // discounted sum amplifies by 1/(1-γ).
    let leak = (0..model.n_states)
        .map(|s| {
            let row: f64 = (0..model.n_actions)
                .map(|a| tau.prob(s, a) * model.alpha_row(s, a).iter().sum::<f64>())
                .sum();
            (row - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let mu_leak = (model.mu.iter().sum::<f64>() - 1.0).abs();
    let tol = FREQUENCY_SUM_TOL + 2.0 * (mu_leak + model.gamma * leak / (1.0 - model.gamma));
    let total = freq.total();
    if (total - 1.0).abs() > tol {
        return Err(Error::Numerical(format!(
            "state-action frequency sums to {total}"
        )));
    }
    Ok(freq)
}

/// Discounted state-action frequency `η^π` of an observation policy.
pub fn state_action_frequency(
    model: &PomdpModel,
    pi: &ObservationPolicy,
) -> Result<StateActionFrequency> {
    let tau = compose_policy(model, pi)?;
    frequency_of_state_policy(model, &tau)
}

/// Normalized discounted reward `R(π) = ⟨r, η^π⟩`.
pub fn reward_of_policy(model: &PomdpModel, pi: &ObservationPolicy) -> Result<f64> {
    Ok(state_action_frequency(model, pi)?.dot(&model.reward))
}

/// Normalized state values `V = (1-γ)(I - γ P_τ)⁻¹ r_τ`, so that
/// `⟨μ, V⟩ = R`.
pub fn state_values(model: &PomdpModel, tau: &StatePolicy) -> Result<Vec<f64>> {
    check_state_policy(model, tau)?;
    let ns = model.n_states;
    let gamma = model.gamma;
    let p = state_kernel(model, tau);
    let system = DMatrix::identity(ns, ns) - p * gamma;
    let rhs = DVector::from_iterator(
        ns,
        (0..ns).map(|s| {
            let r_tau: f64 = tau
                .row(s)
                .iter()
                .enumerate()
                .map(|(a, t)| t * model.reward(s, a))
                .sum();
            (1.0 - gamma) * r_tau
        }),
    );
    let v = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("value system is singular".into()))?;
    Ok(v.iter().copied().collect())
}

/// Conditional state policy `τ(a|s) = η(s,a) / Σ_a' η(s,a')`.
pub fn condition_frequency(eta: &StateActionFrequency) -> Result<StatePolicy> {
    let mut data = Vec::with_capacity(eta.data.len());
    for s in 0..eta.n_states {
        let row = eta.row(s);
        let total: f64 = row.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateMarginal { state: s });
        }
        data.extend(row.iter().map(|v| v / total));
    }
    Ok(StatePolicy(Kernel {
        rows: eta.n_states,
        cols: eta.n_actions,
        data,
    }))
}
