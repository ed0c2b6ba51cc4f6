//! Gibbs sampler for the joint network and item response model.

mod chain;
mod conditionals;
mod output;

pub use chain::{run_chain, run_chains, NoProgress, Progress, ProgressSink, Sampler};
pub use conditionals::*;
pub use output::{trace_mean, ChainOutput, Draw, ScalarTraces};
