//! Method dispatch, policy evaluation and the maze benchmark sweep.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{bcp_solve, dpo_solve, DpoOptions};
use crate::constraints::{ConstraintSystem, Residuals};
use crate::error::{Error, Result};
use crate::io::{self, SolveReport};
use crate::maze::{build_maze_pomdp, generate_maze};
use crate::model::{
    reward_of_policy, state_action_frequency, ObservationPolicy, PomdpModel,
    StateActionFrequency,
};
use crate::nlp::{SolveOptions, SolveStatus};
use crate::rosa::{rosa_solve_with, Certificate, RosaOptions, RESIDUAL_FACTOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rosa,
    Bcp,
    Dpo,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Rosa, Method::Bcp, Method::Dpo];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rosa => "rosa",
            Method::Bcp => "bcp",
            Method::Dpo => "dpo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rosa" => Ok(Method::Rosa),
            "bcp" => Ok(Method::Bcp),
            "dpo" => Ok(Method::Dpo),
            _ => Err(Error::InvalidInput(format!("unknown method {s:?}"))),
        }
    }
}

/// Overrides applied on top of each method's defaults. For DPO `tol` is the
/// gradient tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MethodOptions {
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub restarts: usize,
    pub seed: u64,
}

impl MethodOptions {
    fn solver(&self) -> SolveOptions {
        let mut options = SolveOptions::default();
        if let Some(tol) = self.tol {
            options.kkt_tol = tol;
        }
        if let Some(max_iters) = self.max_iters {
            options.max_iters = max_iters;
        }
        options
    }

    fn dpo(&self) -> DpoOptions {
        let mut options = DpoOptions::default();
        if let Some(tol) = self.tol {
            options.lbfgs.grad_tol = tol;
        }
        if let Some(max_iters) = self.max_iters {
            options.lbfgs.max_iters = max_iters;
        }
        options
    }
}

/// Exact reward and feasibility diagnostics of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub reward: f64,
    pub residuals: Residuals,
    pub min_marginal: f64,
    /// Index of a state with the smallest marginal.
    pub min_marginal_state: usize,
    /// Every state marginal is positive, so conditioning is well defined.
    pub marginals_positive: bool,
    pub eta: Vec<Vec<f64>>,
}

fn min_marginal(eta: &StateActionFrequency) -> (usize, f64) {
    (0..eta.n_states())
        .map(|s| (s, eta.marginal(s)))
        .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
}

pub fn evaluate_policy(model: &PomdpModel, policy: &ObservationPolicy) -> Result<PolicyEvaluation> {
    io::check_policy_shape(model, policy)?;
    let eta = state_action_frequency(model, policy)?;
    let system = ConstraintSystem::build(model)?;
    let (min_marginal_state, min_marginal) = min_marginal(&eta);
    Ok(PolicyEvaluation {
        reward: reward_of_policy(model, policy)?,
        residuals: system.residuals(&eta)?,
        min_marginal,
        min_marginal_state,
        marginals_positive: min_marginal > 0.0,
        eta: eta.to_rows(),
    })
}

/// Report of a baseline, certified through the frequency of its policy.
#[allow(clippy::too_many_arguments)]
fn baseline_report(
    model: &PomdpModel,
    method: Method,
    policy: &ObservationPolicy,
    status: SolveStatus,
    kkt_residual: f64,
    constraint_residual: f64,
    iterations: usize,
    time_s: f64,
    tol: f64,
) -> Result<SolveReport> {
    let eval = evaluate_policy(model, policy)?;
    let r = eval.residuals;
    let certified = status == SolveStatus::Converged
        && r.max_linear.max(r.max_quadratic) <= RESIDUAL_FACTOR * tol
        && r.min_entry >= 0.0;
    Ok(SolveReport {
        method: method.to_string(),
        reward: eval.reward,
        policy: policy.to_rows(),
        eta: eval.eta,
        status,
        kkt_residual,
        constraint_residual,
        iterations,
        time_s,
        certificate: Certificate {
            residuals: r,
            reward_gap: 0.0,
            min_marginal: eval.min_marginal,
            certified,
        },
    })
}

/// Runs one method. Solver failures are reported through `status`; errors
/// are reserved for invalid input and numerical breakdown of the model.
pub fn run_method(model: &PomdpModel, method: Method, options: &MethodOptions) -> Result<SolveReport> {
    log::info!(
        "{method}: {} states, {} observations, gamma = {}",
        model.n_states(),
        model.n_obs(),
        model.gamma()
    );
    let report = match method {
        Method::Rosa => {
            let result = rosa_solve_with(
                model,
                &RosaOptions {
                    solver: options.solver(),
                    restarts: options.restarts.max(1),
                    seed: options.seed,
                },
            )?;
            SolveReport {
                method: method.to_string(),
                reward: reward_of_policy(model, &result.obs_policy)?,
                policy: result.obs_policy.to_rows(),
                eta: result.eta_star.to_rows(),
                status: result.solver.status,
                kkt_residual: result.solver.kkt_residual,
                constraint_residual: result.solver.constraint_residual,
                iterations: result.solver.iterations,
                time_s: result.wall_seconds,
                certificate: result.certificate,
            }
        }
        Method::Bcp => {
            let solver = options.solver();
            let result = bcp_solve(model, &solver)?;
            baseline_report(
                model,
                method,
                &result.policy,
                result.solver.status,
                result.solver.kkt_residual,
                result.solver.constraint_residual,
                result.solver.iterations,
                result.wall_seconds,
                solver.kkt_tol,
            )?
        }
        Method::Dpo => {
            let result = dpo_solve(model, &options.dpo())?;
            baseline_report(
                model,
                method,
                &result.policy,
                result.status,
                result.grad_norm,
                0.0,
                result.iterations,
                result.wall_seconds,
                SolveOptions::default().kkt_tol,
            )?
        }
    };
    log::info!(
        "{method}: status {}, reward {:.10}, {} iterations, {:.3} s",
        report.status,
        report.reward,
        report.iterations,
        report.time_s
    );
    Ok(report)
}

/// Default discount sweep `γ = 1 - 10^{-k/8}` for `k = 8..=40`.
pub fn default_gamma_sweep() -> Vec<f64> {
    (8..=40).map(|k| 1.0 - 10f64.powf(-(k as f64) / 8.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub sizes: Vec<usize>,
    pub gammas: Vec<f64>,
    pub reps: usize,
    pub seed0: u64,
    pub options: MethodOptions,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    /// If set, every cell writes its model and policy files here.
    pub policies: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            sizes: vec![2],
            gammas: vec![0.9999],
            reps: 1,
            seed0: 0,
            options: MethodOptions::default(),
            jobs: 0,
            policies: None,
        }
    }
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    pub n: usize,
    pub states: usize,
    pub gamma: f64,
    pub seed: u64,
    pub reward: f64,
    pub time_s: f64,
    pub status: String,
    pub iters: usize,
}

/// File names used for a cell when `policies` is set.
pub fn cell_files(method: Method, n: usize, gamma: f64, seed: u64) -> (String, String) {
    (
        format!("model_n{n}_g{gamma}_s{seed}.json"),
        format!("{method}_n{n}_g{gamma}_s{seed}.json"),
    )
}

fn run_cell(config: &BenchConfig, method: Method, n: usize, gamma: f64, seed: u64) -> BenchRecord {
    let mut record = BenchRecord {
        method,
        n,
        states: 2 * n * n - 1,
        gamma,
        seed,
        reward: f64::NAN,
        time_s: 0.0,
        status: "error".into(),
        iters: 0,
    };
    let outcome = (|| -> Result<SolveReport> {
        let model = build_maze_pomdp(&generate_maze(n, seed)?, gamma)?.model;
        let report = run_method(&model, method, &config.options)?;
        if let Some(dir) = &config.policies {
            let (model_file, policy_file) = cell_files(method, n, gamma, seed);
            io::write_model(dir.join(model_file), &model)?;
            io::write_policy(dir.join(policy_file), &report.policy()?)?;
        }
        Ok(report)
    })();
    match outcome {
        Ok(report) => {
            record.reward = report.reward;
            record.time_s = report.time_s;
            record.status = report.status.to_string();
            record.iters = report.iterations;
        }
        Err(e) => log::warn!("{method} n={n} gamma={gamma} seed={seed}: {e}"),
    }
    record
}

/// Runs every `(method, n, γ, rep)` cell on maze seed `seed0 + rep`. Rows
/// come back ordered by method, n, γ and seed whatever the completion order.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if config.reps == 0 || config.methods.is_empty() || config.sizes.is_empty() {
        return Err(Error::InvalidInput("empty benchmark sweep".into()));
    }
    if config.gammas.is_empty() || config.gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
        return Err(Error::InvalidInput(format!(
            "discount factors must lie in (0, 1): {:?}",
            config.gammas
        )));
    }
    if let Some(&n) = config.sizes.iter().find(|&&n| n < 2) {
        return Err(Error::InvalidInput(format!("maze size {n} is below 2")));
    }
    if let Some(dir) = &config.policies {
        std::fs::create_dir_all(dir)?;
    }
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    let mut sizes = config.sizes.clone();
    sizes.sort();
    sizes.dedup();
    let mut gammas = config.gammas.clone();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();

    let mut cells = Vec::new();
    for &m in &methods {
        for &n in &sizes {
            for &g in &gammas {
                for rep in 0..config.reps {
                    cells.push((m, n, g, config.seed0 + rep as u64));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|&(m, n, g, seed)| run_cell(config, m, n, g, seed))
            .collect()
    }))
}

pub fn write_records<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(input: R) -> Result<Vec<BenchRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut records = Vec::new();
    for r in reader.deserialize() {
        records.push(r?);
    }
    Ok(records)
}

/// Linear interpolation between order statistics. `sorted` must be sorted.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and quantiles of one `(method, n, γ)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub method: Method,
    pub n: usize,
    pub states: usize,
    pub gamma: f64,
    pub runs: usize,
    pub converged: usize,
    pub reward_mean: f64,
    pub reward_quantiles: Vec<f64>,
    pub time_mean: f64,
    pub time_quantiles: Vec<f64>,
}

/// Groups consecutive rows with equal `(method, n, γ)`. Rows without a
/// finite reward (errors) count as runs but not in the statistics.
pub fn summarize(records: &[BenchRecord], quantiles: &[f64]) -> Vec<GroupSummary> {
    let mut groups: Vec<GroupSummary> = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let key = &records[start];
        let end = start
            + records[start..]
                .iter()
                .take_while(|r| r.method == key.method && r.n == key.n && r.gamma == key.gamma)
                .count();
        let group = &records[start..end];
        let ok: Vec<&BenchRecord> = group.iter().filter(|r| r.reward.is_finite()).collect();
        let mut rewards: Vec<f64> = ok.iter().map(|r| r.reward).collect();
        let mut times: Vec<f64> = ok.iter().map(|r| r.time_s).collect();
        rewards.sort_by(f64::total_cmp);
        times.sort_by(f64::total_cmp);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        groups.push(GroupSummary {
            method: key.method,
            n: key.n,
            states: key.states,
            gamma: key.gamma,
            runs: group.len(),
            converged: group.iter().filter(|r| r.status == "converged").count(),
            reward_mean: mean(&rewards),
            reward_quantiles: quantiles.iter().map(|&q| quantile(&rewards, q)).collect(),
            time_mean: mean(&times),
            time_quantiles: quantiles.iter().map(|&q| quantile(&times, q)).collect(),
        });
        start = end;
    }
    groups
}

/// Summary table as CSV, one quantile column pair per requested level.
pub fn write_summary<W: Write>(groups: &[GroupSummary], quantiles: &[f64], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["method", "n", "states", "gamma", "runs", "converged", "reward_mean"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(quantiles.iter().map(|q| format!("reward_q{q}")));
    header.push("time_mean".into());
    header.extend(quantiles.iter().map(|q| format!("time_q{q}")));
    writer.write_record(&header)?;
    for g in groups {
        let mut row = vec![
            g.method.to_string(),
            g.n.to_string(),
            g.states.to_string(),
            g.gamma.to_string(),
            g.runs.to_string(),
            g.converged.to_string(),
            g.reward_mean.to_string(),
        ];
        row.extend(g.reward_quantiles.iter().map(f64::to_string));
        row.push(g.time_mean.to_string());
        row.extend(g.time_quantiles.iter().map(f64::to_string));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
