//! Measure-valued diffusions: particle and PDE solvers for McKean–Vlasov
//! equations, their lifts to measure space, and diagnostics built on them.

pub mod coefficients;
pub mod cylindrical;
pub mod ergodicity;
pub mod error;
pub mod exec;
pub mod feynman_kac;
pub mod fpe;
pub mod lift;
pub mod measure;
pub mod particle;
pub mod rng;

pub use error::{Error, Result};
pub use exec::Execution;

/// Crate version recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
