//! Exact tabular off-policy evaluation with forward and backward state
//! abstractions.
//!
//! The crate is organized around a small set of closed-form computations on
//! finite MDPs (Q-functions, stationary distributions, occupancy measures,
//! time-reversed kernels), partition-based state abstractions with
//! machine-checkable irrelevance conditions, four OPE estimators (FQE, SIS,
//! MIS, DRL), and seed-deterministic generators and experiment drivers.
//!
//! Core numerics are generic over the scalar type (`f32`/`f64`) via
//! [`Scalar`]; the aliases below fix `f64`, which is what the simulator,
//! generators, file formats, and all documented tolerances use.

pub mod abstraction;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod generators;
pub mod io;
pub mod linalg;
pub mod mdp;
pub mod scalar;
pub mod sim;
pub mod solver;

pub use error::{OpeError, Result};
pub use scalar::Scalar;

/// Finite MDP with `f64` entries.
pub type Mdp = mdp::MdpModel<f64>;
/// Stochastic policy table with `f64` entries.
pub type Policy = mdp::PolicyTable<f64>;
/// Offline dataset with `f64` rewards.
pub type Data = mdp::Dataset<f64>;
/// Bundle of exact evaluation quantities with `f64` entries.
pub type Solve = solver::SolveCache<f64>;
/// Quotient model with `f64` entries.
pub type Quotient = abstraction::QuotientModel<f64>;
