//! Numerical analysis of differentially positive dynamical systems.
//!
//! The crate verifies cone-field invariance and contraction along the
//! linearized (variational) flow of a smooth ODE system, estimates
//! Perron-Frobenius vector fields and Hilbert-metric contraction rates,
//! classifies one-dimensional attractors, and constructs certifying cone
//! fields around normally hyperbolic attractors.
//!
//! Module map:
//! - [`dynsys`]: vector fields, flows, variational/prolonged flows;
//! - [`cones`]: cone representations, gauges, the Hilbert projective metric;
//! - [`stability`]: contraction (differential stability) baseline checks;
//! - [`positivity`]: differential positivity checks, PF vectors, rates;
//! - [`attractors`]: fixed points, limit cycles, normal hyperbolicity;
//! - [`construct`]: certifying cone-field construction over a basin.

pub mod attractors;
pub mod cones;
pub mod construct;
pub mod dynsys;
pub mod error;
pub mod linalg;
pub mod positivity;
pub mod sample;
pub mod stability;

pub use error::{Error, Result};
