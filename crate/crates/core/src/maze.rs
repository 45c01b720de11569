//! Random mazes and the navigation POMDPs built from them.
//!
//! A maze with parameter `n` lives on a `(2n-1) × (2n-1)` grid. Cells with
//! both coordinates even are rooms, cells with both coordinates odd are
//! walls, and the remaining cells are passages between neighbouring rooms
//! that a randomized depth-first search opens along a spanning tree.

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PomdpModel;

/// Uniform integer in `0..bound` by Lemire's multiply-shift with
/// rejection of the biased low range.
pub fn below<R: Rng + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0, "empty range");
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let m = u128::from(rng.next_u64()) * u128::from(bound);
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

/// A generated maze. `open[r][c]` is true for walkable cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Maze {
    pub n: usize,
    pub open: Vec<Vec<bool>>,
    pub goal: (usize, usize),
    pub seed: u64,
}

impl Maze {
    pub fn side(&self) -> usize {
        2 * self.n - 1
    }

    pub fn is_open(&self, r: isize, c: isize) -> bool {
        let side = self.side() as isize;
        (0..side).contains(&r) && (0..side).contains(&c) && self.open[r as usize][c as usize]
    }

    /// Open cells in row-major order.
    pub fn open_cells(&self) -> Vec<(usize, usize)> {
        let side = self.side();
        (0..side)
            .flat_map(|r| (0..side).map(move |c| (r, c)))
            .filter(|&(r, c)| self.open[r][c])
            .collect()
    }

    /// True when every open cell is reachable from every other one.
    pub fn is_connected(&self) -> bool {
        let cells = self.open_cells();
        let Some(&first) = cells.first() else {
            return false;
        };
        let side = self.side();
        let mut seen = vec![vec![false; side]; side];
        seen[first.0][first.1] = true;
        let mut stack = vec![first];
        let mut count = 1;
        while let Some((r, c)) = stack.pop() {
            for (dr, dc) in MOVES {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if self.is_open(nr, nc) && !seen[nr as usize][nc as usize] {
                    seen[nr as usize][nc as usize] = true;
                    count += 1;
                    stack.push((nr as usize, nc as usize));
                }
            }
        }
        count == cells.len()
    }

    /// `#` wall, `.` open, `G` goal; one line per grid row.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (r, row) in self.open.iter().enumerate() {
            for (c, &open) in row.iter().enumerate() {
                out.push(match (open, (r, c) == self.goal) {
                    (_, true) => 'G',
                    (true, false) => '.',
                    (false, false) => '#',
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Action displacements `(dr, dc)`: right, left, up, down.
pub const MOVES: [(isize, isize); 4] = [(0, 1), (0, -1), (-1, 0), (1, 0)];
pub const ACTION_NAMES: [&str; 4] = ["right", "left", "up", "down"];

/// Randomized depth-first search over the `n × n` rooms.
///
/// The stream of one [`Xoshiro256StarStar`] seeded with `seed` is consumed
/// as follows: the start room (`below(n²)`, row-major room index); then at
/// every step the unvisited neighbours of the room on top of the stack are
/// listed in the order right, left, up, down and one is picked with
/// `below(count)`; a room without unvisited neighbours is popped. Finally
/// the goal is `below(2n²-1)` over open cells in row-major order.
pub fn generate_maze(n: usize, seed: u64) -> Result<Maze> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("maze parameter n = {n} must be at least 2")));
    }
    let side = 2 * n - 1;
    let mut open = vec![vec![false; side]; side];
    for r in 0..n {
        for c in 0..n {
            open[2 * r][2 * c] = true;
        }
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let start = below(&mut rng, (n * n) as u64) as usize;
    let mut visited = vec![vec![false; n]; n];
    visited[start / n][start % n] = true;
    let mut stack = vec![(start / n, start % n)];
    while let Some(&(r, c)) = stack.last() {
        let candidates: Vec<(usize, usize)> = MOVES
            .iter()
            .filter_map(|&(dr, dc)| {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                let inside = (0..n as isize).contains(&nr) && (0..n as isize).contains(&nc);
                (inside && !visited[nr as usize][nc as usize]).then_some((nr as usize, nc as usize))
            })
            .collect();
        if candidates.is_empty() {
            stack.pop();
            continue;
        }
        let (nr, nc) = candidates[below(&mut rng, candidates.len() as u64) as usize];
        open[r + nr][c + nc] = true;
        visited[nr][nc] = true;
        stack.push((nr, nc));
    }
    let mut maze = Maze {
        n,
        open,
        goal: (0, 0),
        seed,
    };
    let cells = maze.open_cells();
    maze.goal = cells[below(&mut rng, cells.len() as u64) as usize];
    Ok(maze)
}

/// Where the agent is sent after collecting the goal reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalReset {
    /// Uniform over every state, the goal included.
    #[default]
    AllStates,
    /// Uniform over the states other than the goal.
    NonGoalStates,
}

/// Navigation POMDP of a maze with back-references to the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MazePomdp {
    pub model: PomdpModel,
    /// Grid cell of each state.
    pub cells: Vec<(usize, usize)>,
    /// Neighbourhood pattern of each observation id, see [`neighbourhood`].
    pub patterns: Vec<u8>,
    pub goal_state: usize,
}

impl MazePomdp {
    pub fn state_of(&self, cell: (usize, usize)) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }
}

/// 8-bit wall pattern around a cell. Bit `k` is set when the `k`-th
/// neighbour is a wall or outside the grid, neighbours taken in row-major
/// order: up-left, up, up-right, left, right, down-left, down, down-right.
pub fn neighbourhood(maze: &Maze, cell: (usize, usize)) -> u8 {
    let mut bits = 0u8;
    let mut k = 0;
    for dr in -1..=1isize {
        for dc in -1..=1isize {
            if dr == 0 && dc == 0 {
                continue;
            }
            if !maze.is_open(cell.0 as isize + dr, cell.1 as isize + dc) {
                bits |= 1 << k;
            }
            k += 1;
        }
    }
    bits
}

pub fn build_maze_pomdp(maze: &Maze, gamma: f64) -> Result<MazePomdp> {
    build_maze_pomdp_with(maze, gamma, GoalReset::AllStates)
}

/// States are the open cells in row-major order. Moving into a wall leaves
/// the agent in place. Every action at the goal pays `|S|` and resets the
/// agent according to `reset`. Observation ids are assigned by first
/// occurrence of each neighbourhood pattern.
pub fn build_maze_pomdp_with(maze: &Maze, gamma: f64, reset: GoalReset) -> Result<MazePomdp> {
    let cells = maze.open_cells();
    let ns = cells.len();
    let index = |r: usize, c: usize| cells.binary_search(&(r, c)).ok();
    let goal_state = index(maze.goal.0, maze.goal.1)
        .ok_or_else(|| Error::InvalidInput("maze goal is not an open cell".into()))?;
    let reset_row: Vec<f64> = match reset {
        GoalReset::AllStates => vec![1.0 / ns as f64; ns],
        GoalReset::NonGoalStates => (0..ns)
            .map(|s| if s == goal_state { 0.0 } else { 1.0 / (ns - 1) as f64 })
            .collect(),
    };
    let mut alpha = Vec::with_capacity(ns);
    let mut reward = Vec::with_capacity(ns);
    for (s, &(r, c)) in cells.iter().enumerate() {
        if s == goal_state {
            alpha.push(vec![reset_row.clone(); MOVES.len()]);
            reward.push(vec![ns as f64; MOVES.len()]);
            continue;
        }
        let rows = MOVES
            .iter()
            .map(|&(dr, dc)| {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                let target = if maze.is_open(nr, nc) {
                    index(nr as usize, nc as usize).expect("open cell is a state")
                } else {
                    s
                };
                let mut row = vec![0.0; ns];
                row[target] = 1.0;
                row
            })
            .collect();
        alpha.push(rows);
        reward.push(vec![0.0; MOVES.len()]);
    }
    let mut patterns: Vec<u8> = Vec::new();
    let obs_of = cells
        .iter()
        .map(|&cell| {
            let p = neighbourhood(maze, cell);
            match patterns.iter().position(|&q| q == p) {
                Some(o) => o,
                None => {
                    patterns.push(p);
                    patterns.len() - 1
                }
            }
        })
        .collect();
    let model = PomdpModel::new(
        patterns.len(),
        alpha,
        obs_of,
        reward,
        vec![1.0 / ns as f64; ns],
        gamma,
    )?;
    Ok(MazePomdp {
        model,
        cells,
        patterns,
        goal_state,
    })
}

/// Two states, one observation, two actions: action 0 stays, action 1
/// swaps the states; reward 1 in state 1; start in state 0. A policy is
/// the single number `p = π(1 | o)`.
pub fn blind_controller_fixture(gamma: f64) -> Result<PomdpModel> {
    PomdpModel::new(
        1,
        vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        ],
        vec![0, 0],
        vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        vec![1.0, 0.0],
        gamma,
    )
}
