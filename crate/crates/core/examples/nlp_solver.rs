//! The interior-point solver on its own: maximize x + y on the circle
//! x² + y² = 1 with x, y ≥ 0, then verify the first-order conditions.

use std::sync::Arc;

use rosa::nlp::{check_kkt, solve, NlpProblem, QuadraticConstraint, SmoothEquality, SolveOptions};

fn main() -> rosa::Result<()> {
    let circle = QuadraticConstraint {
        constant: -1.0,
        linear: vec![],
        quadratic: vec![(0, 0, 1.0), (1, 1, 1.0)],
    };
    let problem = NlpProblem::new(
        2,
        vec![(0, 1.0), (1, 1.0)],
        vec![],
        vec![Arc::new(circle) as Arc<dyn SmoothEquality>],
        vec![0.0, 0.0],
        vec![0.6, 0.8],
    )?;
    let sol = solve(&problem, &SolveOptions::default())?;
    println!("status {} after {} iterations", sol.status, sol.iterations);
    println!("x = {:.12}, y = {:.12}, f = {:.12}", sol.x[0], sol.x[1], sol.objective_value);
    println!("expected {:.12}", 0.5f64.sqrt());
    let kkt = check_kkt(&problem, &sol.x, &sol.lambda, &sol.z)?;
    println!("{kkt:#?}");
    Ok(())
}
