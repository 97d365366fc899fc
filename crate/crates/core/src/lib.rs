//! Doubly robust censoring unbiased transformations for coarsened-at-random
//! multi-state data, with the simulation laboratory used to check them:
//! illness-death simulation, ODE-based truth, nuisance estimation, pseudo-outcome
//! construction, cross-fitted local linear regression and fuzzy RDD.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crossfit;
pub mod error;
pub mod experiment;
pub mod io;
pub mod nuisance;
pub mod pseudo;
pub mod quad;
pub mod rdd;
pub mod rng;
pub mod sim;
pub mod smooth;
pub mod stats;
pub mod truth;

pub use error::{Error, Result};
