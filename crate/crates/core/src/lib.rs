//! Dense-state simulator and bound verifier for cheat-sensitive quantum
//! private queries.
//!
//! The crate models the GLM08 protocol exactly — every probabilistic
//! element is an enumerated branch with an exact probability — and runs
//! both canonical attacks against it: the database owner's purified-database
//! distinguishing attack and the user's sequential-extraction attack. The
//! closed-form security bounds live in [`bounds`]; measured quantities from
//! the simulations are checked against them by the report layer and the
//! test suite.

pub mod attacks;
pub mod bounds;
pub mod cli;
pub mod error;
pub mod glm08;
pub mod hilbert;
pub mod metrics;
pub mod selftest;

pub use error::{Error, Result};
