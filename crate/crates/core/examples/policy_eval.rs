//! Writes model and policy files, reads them back and evaluates the policy
//! exactly, including the marginal check needed for conditioning.

use rosa::harness::{evaluate_policy, run_method, Method, MethodOptions};
use rosa::io::{read_model, read_policy, write_model, write_policy};
use rosa::maze::{build_maze_pomdp, generate_maze};
use rosa::model::ObservationPolicy;

fn main() -> rosa::Result<()> {
    let dir = std::env::temp_dir().join("rosa-policy-eval");
    std::fs::create_dir_all(&dir)?;
    let model = build_maze_pomdp(&generate_maze(3, 2)?, 0.999)?.model;
    write_model(dir.join("model.json"), &model)?;

    let report = run_method(&model, Method::Rosa, &MethodOptions::default())?;
    write_policy(dir.join("rosa.json"), &report.policy()?)?;
    write_policy(
        dir.join("uniform.json"),
        &ObservationPolicy::uniform(model.n_obs(), model.n_actions()),
    )?;

    let model = read_model(dir.join("model.json"))?;
    for name in ["uniform", "rosa"] {
        let policy = read_policy(dir.join(format!("{name}.json")))?;
        let eval = evaluate_policy(&model, &policy)?;
        println!(
            "{name:8} R = {:.10}  residuals {:.1e}/{:.1e}  min marginal {:.2e} (state {})",
            eval.reward,
            eval.residuals.max_linear,
            eval.residuals.max_quadratic,
            eval.min_marginal,
            eval.min_marginal_state
        );
    }
    println!("report reward {:.10}", report.reward);
    println!("files in {}", dir.display());
    Ok(())
}
