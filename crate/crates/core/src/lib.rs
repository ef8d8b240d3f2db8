//! Simulation of decoherence in two alternative global decompositions of one
//! closed system of linearly coupled oscillators.
//!
//! The same quadratic Hamiltonian is expressed either as an open system `S`
//! coupled to a bath `E`, or, after a center-of-mass transformation, as `CM`
//! coupled to the relative coordinates `R`. Gaussian dynamics is exact for these
//! models; a truncated Fock-space oracle cross-checks it at small sizes.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod decomposition;
pub mod dynamics;
pub mod error;
pub mod fock;
pub mod master;
pub mod metrics;
pub mod models;
pub mod phase_space;

pub use error::{Error, Result};
