//! Command-line orchestration for block particle filtering experiments on
//! the stochastic Oregonator: configuration, dataset generation, filter runs
//! and run comparison.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{compare, filter, generate, steady_state, Comparison, Dominance, Manifest, RunSummary, TraceRow};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
