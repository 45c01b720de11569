//! Comparison methods: direct policy optimization and Bellman-constrained
//! programming.

pub mod bcp;
pub mod dpo;
pub mod lbfgs;

pub use bcp::{bcp_solve, build_bcp_program, BcpResult};
pub use dpo::{
    dpo_gradient, dpo_reward_and_gradient, dpo_solve, write_trace_csv, DpoOptions, DpoResult,
    DpoTraceEntry, SoftmaxParams,
};
pub use lbfgs::{LbfgsOptions, LbfgsStatus};
