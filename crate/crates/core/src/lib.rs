//! Biased random walks among heavy-tailed random conductances.
//!
//! The crate provides a lazily sampled conductance field, enhanced walks,
//! single-walk and two-walk regeneration structures, reference stable limit
//! objects and the estimators used to compare simulations against them.

pub mod config;
pub mod error;
pub mod experiment;
pub mod joint;
pub mod lattice;
pub mod limits;
pub mod regen;
pub mod report;
pub mod rng;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
