//! Numerical core for time-inconsistent control of diffusions whose regime
//! switches at state-dependent rates.
//!
//! The crate is organised bottom-up: switching geometry, a path simulator,
//! a Crank–Nicolson PDE kernel, the partition game, the equilibrium
//! fixed point, cost evaluation, and the regime-switching Merton problem.

pub mod cost;
pub mod equilibrium;
pub mod error;
pub mod expr;
pub mod field;
pub mod grid;
pub mod merton;
pub mod model;
pub mod partition;
pub mod pde;
pub mod problem;
pub mod quadrature;
pub mod sde;
pub mod switching;

pub use error::{Error, Result};
