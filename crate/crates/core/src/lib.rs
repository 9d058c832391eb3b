//! Sampling of Ising models on arbitrary non-negative coupling matrices and
//! joint pseudo-likelihood estimation of the inverse temperature `β` and the
//! magnetization parameter `B` from a single observed configuration.
//!
//! Modules:
//! - [`coupling`]: graphs, random graph generators, scaled adjacency
//!   matrices and regime diagnostics.
//! - [`model`]: the Ising distribution, Glauber dynamics and exact samplers.
//! - [`pseudolikelihood`]: objective, derivatives, existence check and
//!   solvers.
//! - [`meanfield`]: scalar variational quantities and the fixed-point line.
//! - [`harness`]: seeded Monte-Carlo experiments with CSV output.

pub mod coupling;
pub mod error;
pub mod harness;
pub mod meanfield;
pub mod model;
pub mod pseudolikelihood;
pub mod rng;

pub use coupling::{CouplingMatrix, Graph, RegimeLabel, RegimeReport, RegimeThresholds};
pub use error::{Error, FailingSet, Result};
pub use model::{IsingParams, SpinConfig};
pub use pseudolikelihood::{FitResult, FitSummary, SolverOptions};
