//! Open-system simulation and pulse optimization for state transfer on an XY
//! spin chain.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod hamiltonian;
pub mod harness;
pub mod optimizer;
pub mod propagator;
mod sector;

pub use error::{Error, Result};
