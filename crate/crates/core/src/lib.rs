//! Simulation and statistical verification of random overlap structures.
//!
//! A random overlap structure (ROSt) is a pair `(ξ, Q)` of a mass-partition
//! (ordered weights summing to one) and a positive semi-definite overlap
//! matrix with unit diagonal. This crate samples the classical examples —
//! Poisson–Dirichlet partitions and Ruelle probability cascades — applies
//! correlated multiplicative weight evolutions to them, and runs Monte-Carlo
//! hypothesis tests for the invariance and structure properties these
//! processes are expected to satisfy: quasi-stationarity under the evolution,
//! ultrametricity of the overlaps, recovery of the directing (block-level)
//! structure, increment tilting, and related bounds.
//!
//! Modules:
//! - [`pointproc`]: power-tail Poisson processes, Poisson–Dirichlet
//!   mass-partitions, marked partitions and multiplicative shifts.
//! - [`rost`]: the ROSt data model and its structural algebra (Schur powers,
//!   monotone transforms, ultrametricity, state spaces, factorization,
//!   paintbox blocks, directing extraction).
//! - [`rpc`]: hierarchical Poisson cascades and the tree-structured Gaussian
//!   field.
//! - [`evolution`]: the correlated evolution map, admissible increment
//!   functions and their analytic transforms.
//! - [`statlab`]: seeded Monte-Carlo hypothesis tests.
//! - [`stream`]: deterministic substream derivation from a root seed.
//! - [`quad`]: Gauss–Hermite quadrature for Gaussian expectations.
//!
//! All sampling is driven by explicit seeded streams; identical inputs and
//! seeds reproduce results bit for bit, including across thread counts.

pub mod evolution;
pub mod pointproc;
pub mod quad;
pub mod rost;
pub mod rpc;
pub mod statlab;
pub mod stream;

use thiserror::Error;

/// Errors reported by sampling, structural and numeric operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs was violated.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// The data does not have the structure the operation requires
    /// (e.g. a non-transitive block relation or inconsistent cross-block
    /// overlaps).
    #[error("structural error: {0}")]
    Structural(String),
    /// A numeric procedure failed to converge or produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

/// Tolerance for mass-partition sum checks.
pub const TOL_MASS: f64 = 1e-9;

/// Default tolerance for merging nearby overlap values into one state.
pub const DEFAULT_VALUE_TOL: f64 = 1e-6;

/// Remainder budget required of truncated partitions feeding invariance tests.
pub const REMAINDER_BUDGET: f64 = 1e-3;
