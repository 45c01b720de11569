//! Runs ROSA, Bellman-constrained programming and direct policy
//! optimization on the same mazes.

use rosa::harness::{run_method, Method, MethodOptions};
use rosa::maze::{build_maze_pomdp, generate_maze};

fn main() -> rosa::Result<()> {
    println!("{:>4} {:>4} {:>6} {:>14} {:>10} {:>6}  status", "n", "seed", "method", "reward", "time_s", "iters");
    for n in [2, 3, 4] {
        for seed in 0..2 {
            let model = build_maze_pomdp(&generate_maze(n, seed)?, 0.9999)?.model;
            for method in Method::ALL {
                let r = run_method(&model, method, &MethodOptions::default())?;
                println!(
                    "{n:>4} {seed:>4} {method:>6} {:>14.8} {:>10.4} {:>6}  {}",
                    r.reward, r.time_s, r.iterations, r.status
                );
            }
        }
    }
    Ok(())
}
