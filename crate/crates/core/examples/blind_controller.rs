//! The two-state blind controller: the reward as a function of the single
//! policy parameter, compared with the ROSA optimum.

use rosa::maze::blind_controller_fixture;
use rosa::model::{reward_of_policy, ObservationPolicy};
use rosa::nlp::SolveOptions;
use rosa::rosa::rosa_solve;

fn main() -> rosa::Result<()> {
    for gamma in [0.5, 0.9, 0.99] {
        let model = blind_controller_fixture(gamma)?;
        println!("gamma = {gamma}");
        for i in 0..=10 {
            let p = i as f64 / 10.0;
            let pi = ObservationPolicy::new(vec![vec![1.0 - p, p]])?;
            let r = reward_of_policy(&model, &pi)?;
            println!("  p = {p:.1}  R = {r:.6}  {}", "#".repeat((r * 50.0).round() as usize));
        }
        let result = rosa_solve(&model, &SolveOptions::default())?;
        println!(
            "  rosa: p = {:.6}, R = {:.8} ({})",
            result.obs_policy.prob(0, 1),
            result.reward_star,
            result.solver.status
        );
    }
    Ok(())
}
