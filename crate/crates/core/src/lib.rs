//! Gradient-flow dynamics laboratory.
//!
//! Integrates gradient flows of linear and deep networks under square and
//! exponential-family losses, linearizes them around equilibria, and checks
//! the limits against brute-force oracles.

#[cfg(feature = "cli")]
pub mod cli;
pub mod experiments;
pub mod flow;
pub mod linalg;
pub mod losses;
pub mod network;
pub mod oracles;
pub mod spectra;
