//! Verification and validation of surrogate component models embedded in a
//! differential-algebraic simulator.
//!
//! The crate provides a fixed-step integrator with discrete adjoints, concrete
//! synchronous-machine models, a single-machine infinite-bus benchmark, the
//! finite-horizon interface-error acceptance bound, a physics-informed MLP
//! surrogate, worst-case discrepancy search, novelty-driven coverage sampling,
//! conformal calibration of interface channels, and a seeded experiment harness.

pub mod bound;
pub mod conformal;
pub mod dynamics;
pub mod error;
pub mod fmt;
pub mod harness;
pub mod machines;
pub mod novelty;
pub mod par;
pub mod region;
pub mod seed;
pub mod smib;
pub mod surrogate;
pub mod verify;

pub use error::{Error, Result};
