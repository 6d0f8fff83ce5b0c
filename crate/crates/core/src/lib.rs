//! Discrete-space continuous-time Markov chain models of animal movement.
//!
//! The crate covers the whole batch workflow: raster state spaces
//! ([`raster`]), covariate construction ([`covariates`]), the chain itself
//! ([`ctmc`]), imputation of paths between telemetry fixes and their reduction
//! to weighted Poisson regression data ([`pipeline`]), and (penalized) model
//! fitting ([`inference`]). The `ctmc-move` binary drives it from files
//! ([`cli`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod covariates;
pub mod ctmc;
pub mod error;
pub mod inference;
pub mod numeric;
pub mod pipeline;
pub mod raster;

pub use error::{Error, Result};
