pub mod baselines;
pub mod constraints;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod maze;
pub mod model;
pub mod nlp;
pub mod rosa;

pub use error::{Error, Result};
