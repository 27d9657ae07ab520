//! Interior-boundary condition Hamiltonians on multi-sector grids.

pub mod app;
pub mod assembly;
pub mod coeff;
pub mod diagnostics;
pub mod error;
pub mod evolve;
pub mod geometry;
pub mod sparse;

pub use error::{IbcError, Result};
