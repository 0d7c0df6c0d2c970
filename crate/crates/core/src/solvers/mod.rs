//! Confined stochastic gradient descents and Armijo line searches.
//!
//! Every run owns its RNG, seeded from the config, and is single-threaded, so
//! a fixed seed reproduces the trajectory bit for bit.

mod als;
mod armijo;
mod sgd;
mod trace;

pub use als::{als_euclidean, als_manifold, als_pw, AlsOptions};
pub use armijo::{armijo_step, ArmijoOutcome, ArmijoParams};
pub use sgd::{sgd_euclidean, sgd_manifold, sgd_pw, PhiMode, SolverConfig};
pub use trace::{Budget, ClockMode, IterTrace, TraceRecord};
