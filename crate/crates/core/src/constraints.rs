//! Explicit constraint system of the reward maximization problem in
//! state-action space.
//!
//! Variables are the frequencies `η(s, a)`, indexed row-major by `(s, a)`.
//! The feasible set is cut out by
//!
//! * one linear equality per state,
//!   `ℓ_s(η) = Σ_a η(s,a) - γ Σ_{s',a'} α(s|s',a') η(s',a') - (1-γ) μ(s) = 0`;
//! * for every observation class `S_o` with anchor state `s_o`, every other
//!   state `s ∈ S_o` and every action `a ≠ a_0`, the quadratic equality
//!   `Σ_{a'≠a} (η(s_o,a) η(s,a') - η(s_o,a') η(s,a)) = 0`,
//!   which forces the conditional policies of `s` and `s_o` to agree;
//! * nonnegativity of every `η(s, a)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PomdpModel, StateActionFrequency};

/// `ℓ(x) = ⟨coeffs, x⟩ + constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEquality {
    /// Sparse `(variable, coefficient)` pairs, sorted by variable.
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearEquality {
    pub fn new(mut coeffs: Vec<(usize, f64)>, constant: f64) -> Result<Self> {
        coeffs.retain(|&(_, c)| c != 0.0);
        if coeffs.is_empty() {
            return Err(Error::InvalidInput(
                "linear equality needs a nonzero coefficient".into(),
            ));
        }
        coeffs.sort_by_key(|&(i, _)| i);
        Ok(Self { coeffs, constant })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    pub fn max_index(&self) -> usize {
        self.coeffs.iter().map(|&(i, _)| i).max().unwrap_or(0)
    }
}

/// Homogeneous quadratic `p(x) = Σ coeff · x[i] · x[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticEquality {
    /// `(i, j, coeff)` triples.
    pub terms: Vec<(usize, usize, f64)>,
}

impl QuadraticEquality {
    pub fn new(terms: Vec<(usize, usize, f64)>) -> Result<Self> {
        if terms.is_empty() || terms.iter().all(|t| t.2 == 0.0) {
            return Err(Error::InvalidInput(
                "quadratic equality needs a nonzero term".into(),
            ));
        }
        Ok(Self { terms })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, j, c)| c * x[i] * x[j]).sum()
    }

    pub fn max_index(&self) -> usize {
        self.terms.iter().map(|&(i, j, _)| i.max(j)).max().unwrap_or(0)
    }

    /// Terms with `i ≤ j`, like terms merged and zeros dropped.
    pub fn canonical_terms(&self) -> Vec<(usize, usize, f64)> {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, c) in &self.terms {
            *merged.entry((i.min(j), i.max(j))).or_insert(0.0) += c;
        }
        merged
            .into_iter()
            .filter(|&(_, c)| c != 0.0)
            .map(|((i, j), c)| (i, j, c))
            .collect()
    }
}

/// Constraint counts `(linear, quadratic, nonnegativity)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCounts {
    pub linear: usize,
    pub quadratic: usize,
    pub nonneg: usize,
}

/// All constraints of the state-action program for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSystem {
    pub n_vars: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub anchor_action: usize,
    /// Representative state of each observation class, indexed by observation.
    pub anchor_states: Vec<usize>,
    pub linear: Vec<LinearEquality>,
    pub quadratic: Vec<QuadraticEquality>,
}

/// Residuals of a constraint system at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub max_linear: f64,
    pub max_quadratic: f64,
    pub min_entry: f64,
}

impl ConstraintSystem {
    /// Builds the system with the default anchors: action 0 and the lowest
    /// state of each observation class.
    pub fn build(model: &PomdpModel) -> Result<Self> {
        let anchors = default_anchor_states(model)?;
        Self::build_with_anchors(model, 0, &anchors)
    }

    pub fn build_with_anchors(
        model: &PomdpModel,
        anchor_action: usize,
        anchor_states: &[usize],
    ) -> Result<Self> {
        Ok(Self {
            n_vars: model.n_pairs(),
            n_states: model.n_states(),
            n_actions: model.n_actions(),
            anchor_action,
            anchor_states: anchor_states.to_vec(),
            linear: build_linear_constraints(model)?,
            quadratic: build_quadratic_constraints_with_anchors(
                model,
                anchor_action,
                anchor_states,
            )?,
        })
    }

    pub fn counts(&self) -> ConstraintCounts {
        ConstraintCounts {
            linear: self.linear.len(),
            quadratic: self.quadratic.len(),
            nonneg: self.n_vars,
        }
    }

    /// Evaluates every constraint at `eta`.
    pub fn residuals(&self, eta: &StateActionFrequency) -> Result<Residuals> {
        self.residuals_flat(eta.as_flat())
    }

    pub fn residuals_flat(&self, x: &[f64]) -> Result<Residuals> {
        if x.len() != self.n_vars {
            return Err(Error::DimensionMismatch {
                what: "constraint variables",
                expected: self.n_vars,
                got: x.len(),
            });
        }
        let max_abs = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Residuals {
            max_linear: max_abs(&mut self.linear.iter().map(|l| l.value(x))),
            max_quadratic: max_abs(&mut self.quadratic.iter().map(|q| q.value(x))),
            min_entry: x.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }
}

/// Lowest state index in each observation class.
pub fn default_anchor_states(model: &PomdpModel) -> Result<Vec<usize>> {
    model
        .observation_classes()
        .iter()
        .enumerate()
        .map(|(o, class)| class.first().copied().ok_or(Error::EmptyObservationClass(o)))
        .collect()
}

/// One equality `ℓ_s` per state: the coefficient of `η(s',a')` is
/// `[s'=s] - γ α(s|s',a')` and the constant is `-(1-γ) μ(s)`.
pub fn build_linear_constraints(model: &PomdpModel) -> Result<Vec<LinearEquality>> {
    let ns = model.n_states();
    let na = model.n_actions();
    let gamma = model.gamma();
    let mut coeffs: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); ns];
    for s2 in 0..ns {
        for a2 in 0..na {
            let var = model.pair(s2, a2);
            *coeffs[s2].entry(var).or_insert(0.0) += 1.0;
            for (s, &p) in model.alpha_row(s2, a2).iter().enumerate() {
                if p != 0.0 {
                    *coeffs[s].entry(var).or_insert(0.0) -= gamma * p;
                }
            }
        }
    }
    coeffs
        .into_iter()
        .enumerate()
        .map(|(s, row)| {
            LinearEquality::new(row.into_iter().collect(), -(1.0 - gamma) * model.mu()[s])
        })
        .collect()
}

/// Quadratic equalities with the default anchors.
pub fn build_quadratic_constraints(model: &PomdpModel) -> Result<Vec<QuadraticEquality>> {
    let anchors = default_anchor_states(model)?;
    build_quadratic_constraints_with_anchors(model, 0, &anchors)
}

/// Quadratic equalities `p^o_{sa}` in expanded pairwise form, for every
/// observation `o`, state `s ∈ S_o \ {s_o}` and action `a ≠ a_0`.
pub fn build_quadratic_constraints_with_anchors(
    model: &PomdpModel,
    anchor_action: usize,
    anchor_states: &[usize],
) -> Result<Vec<QuadraticEquality>> {
    let na = model.n_actions();
    if anchor_action >= na {
        return Err(Error::InvalidInput(format!(
            "anchor action {anchor_action} out of range"
        )));
    }
    if anchor_states.len() != model.n_obs() {
        return Err(Error::DimensionMismatch {
            what: "anchor states",
            expected: model.n_obs(),
            got: anchor_states.len(),
        });
    }
    let mut out = Vec::new();
    for (o, class) in model.observation_classes().iter().enumerate() {
        if class.is_empty() {
            return Err(Error::EmptyObservationClass(o));
        }
        let anchor = anchor_states[o];
        if model.obs_of(anchor) != o {
            return Err(Error::InvalidInput(format!(
                "anchor state {anchor} does not emit observation {o}"
            )));
        }
        for &s in class.iter().filter(|&&s| s != anchor) {
            for a in (0..na).filter(|&a| a != anchor_action) {
                let mut terms = Vec::with_capacity(2 * (na - 1));
                for b in (0..na).filter(|&b| b != a) {
                    terms.push((model.pair(anchor, a), model.pair(s, b), 1.0));
                    terms.push((model.pair(anchor, b), model.pair(s, a), -1.0));
                }
                out.push(QuadraticEquality::new(terms)?);
            }
        }
    }
    Ok(out)
}

/// `(|S|, (|S| - |O|)(|A| - 1), |S||A|)`.
pub fn count_constraints(model: &PomdpModel) -> ConstraintCounts {
    ConstraintCounts {
        linear: model.n_states(),
        quadratic: (model.n_states() - model.n_obs()) * (model.n_actions() - 1),
        nonneg: model.n_pairs(),
    }
}

/// Residuals of the default constraint system of `model` at `eta`.
pub fn residuals(system: &ConstraintSystem, eta: &StateActionFrequency) -> Result<Residuals> {
    system.residuals(eta)
}

/// Polynomial in the frequencies, as a list of monomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    /// `(coefficient, variables)`; each variable list is sorted and may
    /// repeat an index for higher powers.
    pub terms: Vec<(f64, Vec<usize>)>,
}

impl Polynomial {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, vars)| c * vars.iter().map(|&i| x[i]).product::<f64>())
            .sum()
    }

    pub fn degree(&self) -> usize {
        self.terms.iter().map(|(_, v)| v.len()).max().unwrap_or(0)
    }
}

/// Transfers the linear inequality `Σ b(s,a) τ(a|s) ≥ 0` on state policies to
/// the equivalent polynomial inequality on frequencies,
/// `Σ_{s∈S} Σ_a b(s,a) η(s,a) Π_{s'∈S\{s}} Σ_{a'} η(s',a') ≥ 0`,
/// where `S` is the set of states on which `b` is nonzero. Monomials are
/// expanded and like terms merged.
pub fn transfer_inequality(b: &[(usize, usize, f64)], n_actions: usize) -> Result<Polynomial> {
    let mut support: Vec<usize> = b
        .iter()
        .filter(|t| t.2 != 0.0)
        .map(|&(s, a, _)| {
            if a >= n_actions {
                Err(Error::InvalidInput(format!("action {a} out of range")))
            } else {
                Ok(s)
            }
        })
        .collect::<Result<_>>()?;
    support.sort_unstable();
    support.dedup();
    if support.is_empty() {
        return Err(Error::InvalidInput(
            "inequality has empty support".into(),
        ));
    }

    let mut merged: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for &(s, a, coeff) in b.iter().filter(|t| t.2 != 0.0) {
        let others: Vec<usize> = support.iter().copied().filter(|&t| t != s).collect();
        // Expand Π over the other states of Σ_{a'} η(s', a').
        let mut partial: Vec<Vec<usize>> = vec![vec![s * n_actions + a]];
        for &t in &others {
            let mut next = Vec::with_capacity(partial.len() * n_actions);
            for mono in &partial {
                for a2 in 0..n_actions {
                    let mut m = mono.clone();
                    m.push(t * n_actions + a2);
                    next.push(m);
                }
            }
            partial = next;
        }
        for mut mono in partial {
            mono.sort_unstable();
            *merged.entry(mono).or_insert(0.0) += coeff;
        }
    }
    Ok(Polynomial {
        terms: merged
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(v, c)| (c, v))
            .collect(),
    })
}
