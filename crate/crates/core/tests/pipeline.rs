mod common;

use common::*;
use rosa::constraints::{count_constraints, ConstraintSystem};
use rosa::harness::{evaluate_policy, run_bench, run_method, BenchConfig, Method, MethodOptions};
use rosa::io::{read_model, read_policy};
use rosa::maze::{build_maze_pomdp, generate_maze};
use rosa::model::{reward_of_policy, ObservationPolicy, PomdpModel};
use rosa::nlp::{SolveOptions, SolveStatus};
use rosa::rosa::rosa_solve;

#[test]
fn single_state_model_pays_its_reward() {
    let model = PomdpModel::new(1, vec![vec![vec![1.0]]], vec![0], vec![vec![0.7]], vec![1.0], 0.9)
        .unwrap();
    for method in Method::ALL {
        let report = run_method(&model, method, &MethodOptions::default()).unwrap();
        assert!((report.reward - 0.7).abs() < 1e-12, "{method}");
        assert_eq!(report.policy, vec![vec![1.0]]);
    }
    let result = rosa_solve(&model, &SolveOptions::default()).unwrap();
    assert!((result.reward_star - 0.7).abs() < 1e-9);
    assert!((result.eta_star.get(0, 0) - 1.0).abs() < 1e-9);
}

#[test]
fn all_methods_match_value_iteration_when_fully_observed() {
    let mut g = Gen::new(5);
    for _ in 0..10 {
        let ns = g.between(2, 5);
        let na = g.between(2, 3);
        let model = fully_observed(&mut g, ns, na, 0.9);
        let best = value_iteration(&model);
        for method in Method::ALL {
            let report = run_method(&model, method, &MethodOptions::default()).unwrap();
            assert!(
                relative_gap(report.reward, best) <= 1e-4,
                "{method}: {} vs {best}",
                report.reward
            );
        }
    }
}

#[test]
fn small_maze_is_certified() {
    let model = build_maze_pomdp(&generate_maze(2, 1).unwrap(), 0.99).unwrap().model;
    let report = run_method(&model, Method::Rosa, &MethodOptions::default()).unwrap();
    assert_eq!(report.status, SolveStatus::Converged);
    let c = report.certificate;
    assert!(c.certified);
    assert!(c.residuals.max_linear <= 1e-6 && c.residuals.max_quadratic <= 1e-6);
    assert!(c.reward_gap <= 1e-6);
}

#[test]
fn reward_shift_moves_the_optimum_by_the_shift() {
    for seed in 0..4 {
        let model = build_maze_pomdp(&generate_maze(3, seed).unwrap(), 0.99).unwrap().model;
        let base = rosa_solve(&model, &SolveOptions::default()).unwrap();
        let shifted = rosa_solve(&model.with_reward_shift(2.5), &SolveOptions::default()).unwrap();
        assert!((shifted.reward_star - base.reward_star - 2.5).abs() < 1e-6);
    }
}

#[test]
fn eval_reproduces_the_solve_report() {
    let model = build_maze_pomdp(&generate_maze(3, 6).unwrap(), 0.999).unwrap().model;
    let result = rosa_solve(&model, &SolveOptions::default()).unwrap();
    let report = run_method(&model, Method::Rosa, &MethodOptions::default()).unwrap();
    let eval = evaluate_policy(&model, &report.policy().unwrap()).unwrap();
    assert!((eval.reward - result.reward_star).abs() <= 1e-6);
    assert_eq!(eval.reward, report.reward);
    assert!(eval.marginals_positive);
    assert!(eval.residuals.max_linear <= 1e-9 && eval.residuals.max_quadratic <= 1e-9);
}

#[test]
fn uniform_policy_evaluates_cleanly() {
    let mut g = Gen::new(8);
    for _ in 0..10 {
        let model = random_model(&mut g, 6, 3, 3, 0.99);
        let eval = evaluate_policy(&model, &ObservationPolicy::uniform(3, 3)).unwrap();
        assert!(eval.reward.is_finite());
        assert!(eval.residuals.max_linear <= 1e-9 && eval.residuals.max_quadratic <= 1e-9);
    }
}

#[test]
fn bench_rewards_are_reproducible_from_policy_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = BenchConfig {
        methods: vec![Method::Rosa, Method::Bcp, Method::Dpo],
        sizes: vec![2, 3],
        gammas: vec![0.99],
        reps: 2,
        seed0: 3,
        policies: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let rows = run_bench(&config).unwrap();
    assert_eq!(rows.len(), 12);
    for row in &rows {
        let (model_file, policy_file) = rosa::harness::cell_files(row.method, row.n, row.gamma, row.seed);
        let model = read_model(dir.path().join(model_file)).unwrap();
        let policy = read_policy(dir.path().join(policy_file)).unwrap();
        assert_eq!(reward_of_policy(&model, &policy).unwrap(), row.reward);
    }

    let again = run_bench(&BenchConfig {
        policies: None,
        jobs: 1,
        ..config
    })
    .unwrap();
    let strip = |rows: &[rosa::harness::BenchRecord]| {
        rows.iter()
            .map(|r| (r.method, r.n, r.gamma.to_bits(), r.seed, r.reward.to_bits(), r.status.clone(), r.iters))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&rows), strip(&again));
}

#[test]
fn constraint_counts_on_a_49_state_maze() {
    let model = build_maze_pomdp(&generate_maze(5, 7).unwrap(), 0.9999).unwrap().model;
    assert_eq!(model.n_states(), 49);
    let m = model.n_obs();
    let c = count_constraints(&model);
    assert_eq!((c.linear, c.quadratic, c.nonneg), (49, (49 - m) * 3, 196));
    let system = ConstraintSystem::build(&model).unwrap();
    assert_eq!(system.quadratic.len(), c.quadratic);
}

#[test]
fn fully_observed_models_have_no_quadratic_constraints() {
    let mut g = Gen::new(9);
    let model = fully_observed(&mut g, 5, 3, 0.9);
    assert_eq!(count_constraints(&model).quadratic, 0);
    assert!(ConstraintSystem::build(&model).unwrap().quadratic.is_empty());
}
