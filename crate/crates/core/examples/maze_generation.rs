//! Generates a maze, prints it with its observation classes and writes the
//! model file.
//!
//! cargo run --example maze_generation -- 3 7 /tmp/maze.json

use rosa::io::write_model;
use rosa::maze::{build_maze_pomdp, generate_maze};

fn main() -> rosa::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n = args.first().map_or(3, |s| s.parse().expect("n"));
    let seed = args.get(1).map_or(7, |s| s.parse().expect("seed"));

    let maze = generate_maze(n, seed)?;
    print!("{}", maze.render());
    let pomdp = build_maze_pomdp(&maze, 0.9999)?;
    let model = &pomdp.model;
    println!(
        "{} states, {} observations, {} actions, goal at {:?}",
        model.n_states(),
        model.n_obs(),
        model.n_actions(),
        pomdp.cells[pomdp.goal_state]
    );
    for (o, class) in model.observation_classes().iter().enumerate() {
        let cells: Vec<_> = class.iter().map(|&s| pomdp.cells[s]).collect();
        println!("  obs {o:2} pattern {:08b}: {cells:?}", pomdp.patterns[o]);
    }
    if let Some(path) = args.get(2) {
        write_model(path, model)?;
        println!("wrote {path}");
    }
    Ok(())
}
