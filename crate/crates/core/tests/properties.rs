mod common;

use proptest::prelude::*;

use common::*;
use rosa::baselines::{dpo_gradient, SoftmaxParams};
use rosa::constraints::{count_constraints, ConstraintSystem};
use rosa::harness::quantile;
use rosa::io::{parse_model, to_json, ModelFile};
use rosa::maze::{build_maze_pomdp, generate_maze};
use rosa::model::{
    compose_policy, condition_frequency, reward_of_policy, state_action_frequency, state_values,
};

fn instance() -> impl Strategy<Value = (u64, usize, usize, usize, f64)> {
    (any::<u64>(), 1usize..7, 1usize..7, 1usize..4, prop::sample::select(vec![0.3, 0.9, 0.99, 0.999]))
        .prop_map(|(seed, ns, no, na, gamma)| (seed, ns, no.min(ns), na, gamma))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frequencies_are_feasible_and_match_the_series((seed, ns, no, na, gamma) in instance()) {
        let mut g = Gen::new(seed);
        let model = random_model(&mut g, ns, no, na, gamma);
        let pi = random_policy(&mut g, no, na);
        let eta = state_action_frequency(&model, &pi).unwrap();
        prop_assert!((eta.total() - 1.0).abs() < 1e-9);
        let series = frequency_by_series(&model, &pi);
        for (x, y) in eta.as_flat().iter().zip(&series) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let r = ConstraintSystem::build(&model).unwrap().residuals(&eta).unwrap();
        prop_assert!(r.max_linear < 1e-9 && r.max_quadratic < 1e-9 && r.min_entry >= 0.0);
    }

    #[test]
    fn conditioning_recovers_the_state_policy((seed, ns, no, na, gamma) in instance()) {
        let mut g = Gen::new(seed);
        let model = random_model(&mut g, ns, no, na, gamma);
        let pi = random_policy(&mut g, no, na);
        let tau = compose_policy(&model, &pi).unwrap();
        let back = condition_frequency(&state_action_frequency(&model, &pi).unwrap()).unwrap();
        for s in 0..ns {
            for a in 0..na {
                prop_assert!((tau.prob(s, a) - back.prob(s, a)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reward_equals_initial_value((seed, ns, no, na, gamma) in instance()) {
        let mut g = Gen::new(seed);
        let model = random_model(&mut g, ns, no, na, gamma);
        let pi = random_policy(&mut g, no, na);
        let tau = compose_policy(&model, &pi).unwrap();
        let v = state_values(&model, &tau).unwrap();
        let by_values: f64 = model.mu().iter().zip(&v).map(|(m, x)| m * x).sum();
        prop_assert!((reward_of_policy(&model, &pi).unwrap() - by_values).abs() < 1e-9);
    }

    #[test]
    fn softmax_gradient_rows_sum_to_zero((seed, ns, no, na, gamma) in instance()) {
        let mut g = Gen::new(seed);
        let model = random_model(&mut g, ns, no, na, gamma);
        let theta: Vec<f64> = (0..no * na).map(|_| 3.0 * g.uniform() - 1.5).collect();
        let grad = dpo_gradient(&model, &SoftmaxParams::from_flat(no, na, &theta).unwrap()).unwrap();
        for row in grad {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn model_files_roundtrip((seed, ns, no, na, gamma) in instance()) {
        let mut g = Gen::new(seed);
        let model = random_model(&mut g, ns, no, na, gamma);
        let text = to_json(&ModelFile::from(&model)).unwrap();
        prop_assert_eq!(parse_model(&text).unwrap(), model);
    }

    #[test]
    fn mazes_have_the_expected_shape(n in 2usize..9, seed in any::<u64>()) {
        let maze = generate_maze(n, seed).unwrap();
        prop_assert!(maze.is_connected());
        let model = build_maze_pomdp(&maze, 0.99).unwrap().model;
        prop_assert_eq!(model.n_states(), 2 * n * n - 1);
        let c = count_constraints(&model);
        prop_assert_eq!(c.quadratic, (model.n_states() - model.n_obs()) * 3);
    }

    #[test]
    fn quantiles_are_monotone(mut v in prop::collection::vec(-1e3f64..1e3, 1..40), q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
        v.sort_by(f64::total_cmp);
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let (a, b) = (quantile(&v, lo), quantile(&v, hi));
        prop_assert!(v[0] <= a && a <= b && b <= v[v.len() - 1]);
    }
}
