//! Configuration, scenarios and drivers behind the `ibc-sim` binary.

pub mod config;
pub mod refine;
pub mod run;
pub mod scenarios;

pub use config::RunConfig;
pub use refine::{refine_study, ConvergenceTable};
pub use run::{dump_matrix, run, RunOptions, RunSummary};
