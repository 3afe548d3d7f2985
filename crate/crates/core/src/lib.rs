//! Simulation and numerical estimation for heavy-tailed inhomogeneous random
//! graphs: graph realization and component statistics, the associated
//! multi-type branching process, and the hub-driven upper-tail machinery for
//! the largest component (hub count, rate function, leading constant,
//! planted and conditional experiments, finite-type coupling).
//!
//! Everything is deterministic given a master seed: randomness comes from
//! counter-based streams ([`rng`]), so results are independent of thread
//! count and scheduling.

pub mod branching;
pub mod cli;
pub mod experiments;
pub mod graph;
pub mod ldp;
pub mod model;
pub mod numeric;
pub mod rng;

/// Crate-wide error type. [`Error::Domain`] marks invalid user input (CLI
/// exit code 2); the other variants are runtime failures (exit code 3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("coupling unavailable: {0}")]
    CouplingUnavailable(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
