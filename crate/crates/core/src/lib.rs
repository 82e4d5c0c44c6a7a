//! Nonstandard Euler–Maruyama (NSEM) integration of Itô SDEs.
//!
//! The crate provides the NSEM scheme together with the Euler–Maruyama and
//! balanced implicit baselines, seeded Brownian paths that can be coarsened
//! without losing the coupling, closed-form and numeric minimal-step bounds
//! for domain invariance, and the Monte Carlo drivers used by the `nsem`
//! command-line tool.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod csv;
pub mod error;
pub mod model;
pub mod rng;
pub mod schemes;
pub mod specfun;

pub use error::{Error, Result};
