//! Instance generators and independent oracles shared by the integration
//! tests and the acceptance suite.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use rosa::maze::below;
use rosa::model::{ObservationPolicy, PomdpModel};

pub struct Gen(Xoshiro256StarStar);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64) / ((1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        below(&mut self.0, n as u64) as usize
    }

    /// Inclusive range.
    pub fn between(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    /// Strictly positive point of the simplex.
    pub fn simplex(&mut self, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| self.uniform() + 0.02).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    /// Simplex point with roughly half of the entries zero.
    pub fn sparse_simplex(&mut self, n: usize) -> Vec<f64> {
        let keep = self.below(n);
        let raw: Vec<f64> = (0..n)
            .map(|i| if i == keep || self.uniform() < 0.5 { self.uniform() + 0.02 } else { 0.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Random model whose observation classes are all nonempty.
pub fn random_model(g: &mut Gen, ns: usize, no: usize, na: usize, gamma: f64) -> PomdpModel {
    assert!(no <= ns);
    let alpha = (0..ns)
        .map(|_| (0..na).map(|_| g.sparse_simplex(ns)).collect())
        .collect();
    let mut obs_of: Vec<usize> = (0..ns).map(|s| if s < no { s } else { g.below(no) }).collect();
    for s in (1..ns).rev() {
        let t = g.below(s + 1);
        obs_of.swap(s, t);
    }
    let reward = (0..ns)
        .map(|_| (0..na).map(|_| 2.0 * g.uniform() - 0.5).collect())
        .collect();
    let mu = g.simplex(ns);
    PomdpModel::new(no, alpha, obs_of, reward, mu, gamma).unwrap()
}

pub fn fully_observed(g: &mut Gen, ns: usize, na: usize, gamma: f64) -> PomdpModel {
    let alpha = (0..ns)
        .map(|_| (0..na).map(|_| g.sparse_simplex(ns)).collect())
        .collect();
    let reward = (0..ns)
        .map(|_| (0..na).map(|_| 2.0 * g.uniform() - 0.5).collect())
        .collect();
    PomdpModel::new(ns, alpha, (0..ns).collect(), reward, g.simplex(ns), gamma).unwrap()
}

pub fn random_policy(g: &mut Gen, no: usize, na: usize) -> ObservationPolicy {
    ObservationPolicy::new_normalized((0..no).map(|_| g.simplex(na)).collect()).unwrap()
}

/// Optimal normalized reward of a fully observed model by value iteration
/// on `V = max_a (1-γ) r + γ α V`, run to sup-norm residual `1e-12`.
pub fn value_iteration(model: &PomdpModel) -> f64 {
    let (ns, na, gamma) = (model.n_states(), model.n_actions(), model.gamma());
    let mut v = vec![0.0; ns];
    loop {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        (1.0 - gamma) * model.reward(s, a)
                            + gamma * (0..ns).map(|t| model.alpha(s, a, t) * v[t]).sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change <= 1e-12 {
            break;
        }
    }
    model.mu().iter().zip(&v).map(|(m, x)| m * x).sum()
}

/// `Σ_t (1-γ) γ^t P(s_t = s, a_t = a)` by forward simulation of the
/// distribution, truncated once `γ^t < 1e-15`.
pub fn frequency_by_series(model: &PomdpModel, pi: &ObservationPolicy) -> Vec<f64> {
    let (ns, na, gamma) = (model.n_states(), model.n_actions(), model.gamma());
    let mut dist = model.mu().to_vec();
    let mut acc = vec![0.0; ns * na];
    let mut w = 1.0 - gamma;
    let mut discount = 1.0;
    while discount >= 1e-15 {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let mass = dist[s] * pi.prob(model.obs_of(s), a);
                acc[s * na + a] += w * mass;
                for (t, x) in next.iter_mut().enumerate() {
                    *x += mass * model.alpha(s, a, t);
                }
            }
        }
        dist = next;
        w *= gamma;
        discount *= gamma;
    }
    acc
}

/// Maximum of `c·x` over `{A x = b, x ≥ 0}` by enumerating every basis.
/// `A` must have full row rank and the polytope must be bounded.
pub fn lp_by_vertices(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Option<f64> {
    let (m, n) = (a.len(), c.len());
    let mut best: Option<f64> = None;
    let mut basis: Vec<usize> = (0..m).collect();
    loop {
        let mat = DMatrix::from_fn(m, m, |i, j| a[i][basis[j]]);
        if let Some(xb) = mat.lu().solve(&DVector::from_column_slice(b)) {
            if xb.iter().all(|&v| v >= -1e-12) {
                let value: f64 = basis.iter().zip(xb.iter()).map(|(&j, &v)| c[j] * v).sum();
                best = Some(best.map_or(value, |x: f64| x.max(value)));
            }
        }
        // next combination in lexicographic order
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if basis[i] < n - m + i {
                break;
            }
        }
        basis[i] += 1;
        for k in i + 1..m {
            basis[k] = basis[k - 1] + 1;
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}
