//! Confined Riemannian stochastic gradient descent and Armijo line search for
//! regularized weighted low-rank approximation.
//!
//! Iterates live on `V_k(R^m) x R^k x V_k(R^n)` as reduced SVDs `(U, x, V)`, or
//! in `R^{m x k} x R^{n x k}` as factor pairs `(X, Y)` for the Euclidean
//! baselines. All solvers are sequential and deterministic for a given seed.

pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod solvers;
pub mod step_policy;
pub mod stiefel;
pub mod svd;

pub use error::{Result, WlraError};
pub use model::{FactorPair, ProblemData, Regularization, SampleIndex, Sampler};
pub use solvers::{AlsOptions, ArmijoParams, Budget, ClockMode, IterTrace, PhiMode, SolverConfig, TraceRecord};
pub use step_policy::{PolicyKind, Schedule, StepPolicy};
pub use stiefel::{Matrix, ProductPoint, ProductTangent, StiefelPoint, TangentVector, Vector};
