use thiserror::Error;

/// Errors raised by model construction, evaluation and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} row {row} is not a probability distribution (sum = {sum})")]
    NotStochastic {
        what: &'static str,
        row: usize,
        sum: f64,
    },

    #[error("state {state} has zero marginal frequency; conditioning is undefined")]
    DegenerateMarginal { state: usize },

    #[error("observation {obs} has zero total marginal frequency; policy recovery is undefined")]
    DegenerateObservationClass { obs: usize },

    #[error("observation {0} is not emitted by any state")]
    EmptyObservationClass(usize),

    #[error("observation mechanism is not deterministic at state {0}")]
    StochasticObservation(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("linear equality constraints are inconsistent")]
    InfeasibleLinear,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
