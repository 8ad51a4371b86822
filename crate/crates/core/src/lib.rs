//! Interventional mediation effects with two (or more) discrete mediators.
//!
//! The crate estimates the total effect of a binary treatment and its
//! decomposition into direct, indirect-through-each-mediator and covariant
//! parts, using one-step and targeted minimum loss estimators with
//! influence-function based inference.

// Index loops read closer to the formulas, and `!(x > 0.0)` rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod density;
pub mod eif;
pub mod error;
pub mod estimators;
pub mod functionals;
pub mod learners;
pub mod multimediator;
pub mod nuisance;
pub mod simulation;

pub use error::{Error, Result};
