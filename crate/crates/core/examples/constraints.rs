//! Builds the polynomial description of the feasible frequencies and checks
//! it on the frequencies of random policies.

use rosa::constraints::{count_constraints, ConstraintSystem};
use rosa::maze::{build_maze_pomdp, generate_maze};
use rosa::model::{state_action_frequency, ObservationPolicy};

fn main() -> rosa::Result<()> {
    let model = build_maze_pomdp(&generate_maze(3, 1)?, 0.99)?.model;
    let system = ConstraintSystem::build(&model)?;
    let counts = count_constraints(&model);
    println!(
        "{} states, {} observations: {} linear, {} quadratic, {} nonnegativity",
        model.n_states(),
        model.n_obs(),
        counts.linear,
        counts.quadratic,
        counts.nonneg
    );
    println!("anchor action {}, first quadratic constraint:", system.anchor_action);
    for &(i, j, c) in &system.quadratic[0].terms {
        let (s, a) = (i / model.n_actions(), i % model.n_actions());
        let (t, b) = (j / model.n_actions(), j % model.n_actions());
        println!("  {c:+.0} eta({s},{a}) eta({t},{b})");
    }

    // Any memoryless policy gives a feasible frequency.
    for k in 0..3 {
        let rows = (0..model.n_obs())
            .map(|o| (0..model.n_actions()).map(|a| 1.0 + ((o * 7 + a * 3 + k) % 5) as f64).collect())
            .collect();
        let pi = ObservationPolicy::new_normalized(rows)?;
        let eta = state_action_frequency(&model, &pi)?;
        let r = system.residuals(&eta)?;
        println!(
            "policy {k}: linear {:.1e}, quadratic {:.1e}, min entry {:.3}",
            r.max_linear, r.max_quadratic, r.min_entry
        );
    }
    Ok(())
}
