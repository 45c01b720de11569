//! Solves a maze POMDP with ROSA and checks the result independently.

use rosa::maze::{build_maze_pomdp, generate_maze};
use rosa::model::reward_of_policy;
use rosa::nlp::SolveOptions;
use rosa::rosa::rosa_solve;

fn main() -> rosa::Result<()> {
    let maze = generate_maze(4, 3)?;
    let model = build_maze_pomdp(&maze, 0.9999)?.model;
    let result = rosa_solve(&model, &SolveOptions::default())?;

    println!("status      {}", result.solver.status);
    println!("iterations  {}", result.solver.iterations);
    println!("time        {:.3} s", result.wall_seconds);
    println!(
        "constraints {} linear, {} quadratic, {} bounds",
        result.counts.linear, result.counts.quadratic, result.counts.nonneg
    );
    println!("<r, eta*>   {:.10}", result.reward_star);
    println!("R(pi*)      {:.10}", reward_of_policy(&model, &result.obs_policy)?);
    let c = &result.certificate;
    println!(
        "certificate gap {:.1e}, linear {:.1e}, quadratic {:.1e}, certified {}",
        c.reward_gap, c.residuals.max_linear, c.residuals.max_quadratic, c.certified
    );
    println!("policy (one row per observation):");
    for (o, row) in result.obs_policy.to_rows().iter().enumerate() {
        let row: Vec<String> = row.iter().map(|p| format!("{p:.3}")).collect();
        println!("  {o:2}: [{}]", row.join(", "));
    }
    Ok(())
}
