//! JSON file formats for models, policies, solve reports and constraint dumps.
//!
//! Model files hold `n_states`, `n_obs`, `n_actions`, `alpha[s][a][s']`,
//! `obs_of[s]`, `reward[s][a]`, `mu[s]` and `gamma`. Policy files hold
//! `pi[o][a]`. Writers emit pretty-printed JSON, so equal values give equal
//! bytes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintCounts, ConstraintSystem, LinearEquality, QuadraticEquality};
use crate::error::{Error, Result};
use crate::model::{ObservationPolicy, PomdpModel};
use crate::nlp::SolveStatus;
use crate::rosa::Certificate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n_states: usize,
    pub n_obs: usize,
    pub n_actions: usize,
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub obs_of: Vec<usize>,
    pub reward: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub gamma: f64,
}

impl From<&PomdpModel> for ModelFile {
    fn from(model: &PomdpModel) -> Self {
        Self {
            n_states: model.n_states(),
            n_obs: model.n_obs(),
            n_actions: model.n_actions(),
            alpha: model.alpha_nested(),
            obs_of: model.observation_map().to_vec(),
            reward: model.reward_nested(),
            mu: model.mu().to_vec(),
            gamma: model.gamma(),
        }
    }
}

impl ModelFile {
    /// Validates the header against the arrays and builds the model.
    pub fn into_model(self) -> Result<PomdpModel> {
        let model = PomdpModel::new(
            self.n_obs,
            self.alpha,
            self.obs_of,
            self.reward,
            self.mu,
            self.gamma,
        )?;
        check("n_states", self.n_states, model.n_states())?;
        check("n_actions", self.n_actions, model.n_actions())?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub pi: Vec<Vec<f64>>,
}

impl From<&ObservationPolicy> for PolicyFile {
    fn from(policy: &ObservationPolicy) -> Self {
        Self {
            pi: policy.to_rows(),
        }
    }
}

/// Outcome of one solve, shared by all methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    /// Exactly evaluated reward of `policy`.
    pub reward: f64,
    pub policy: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub time_s: f64,
    pub certificate: Certificate,
}

impl SolveReport {
    pub fn policy(&self) -> Result<ObservationPolicy> {
        ObservationPolicy::new(self.policy.clone())
    }
}

/// Constraint system with its counts as a header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintDump {
    pub counts: ConstraintCounts,
    pub n_vars: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub anchor_action: usize,
    pub anchor_states: Vec<usize>,
    pub linear: Vec<LinearEquality>,
    pub quadratic: Vec<QuadraticEquality>,
}

impl From<&ConstraintSystem> for ConstraintDump {
    fn from(system: &ConstraintSystem) -> Self {
        Self {
            counts: system.counts(),
            n_vars: system.n_vars,
            n_states: system.n_states,
            n_actions: system.n_actions,
            anchor_action: system.anchor_action,
            anchor_states: system.anchor_states.clone(),
            linear: system.linear.clone(),
            quadratic: system.quadratic.clone(),
        }
    }
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn parse_model(text: &str) -> Result<PomdpModel> {
    serde_json::from_str::<ModelFile>(text)?.into_model()
}

pub fn read_model(path: impl AsRef<Path>) -> Result<PomdpModel> {
    read_json::<ModelFile>(path)?.into_model()
}

pub fn write_model(path: impl AsRef<Path>, model: &PomdpModel) -> Result<()> {
    write_json(path, &ModelFile::from(model))
}

pub fn parse_policy(text: &str) -> Result<ObservationPolicy> {
    ObservationPolicy::new(serde_json::from_str::<PolicyFile>(text)?.pi)
}

pub fn read_policy(path: impl AsRef<Path>) -> Result<ObservationPolicy> {
    ObservationPolicy::new(read_json::<PolicyFile>(path)?.pi)
}

pub fn write_policy(path: impl AsRef<Path>, policy: &ObservationPolicy) -> Result<()> {
    write_json(path, &PolicyFile::from(policy))
}

/// Rejects a policy whose shape does not fit `model`.
pub fn check_policy_shape(model: &PomdpModel, policy: &ObservationPolicy) -> Result<()> {
    check("policy observations", model.n_obs(), policy.n_obs())?;
    check("policy actions", model.n_actions(), policy.n_actions())
}
