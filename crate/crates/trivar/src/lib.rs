//! Full-information maximum-likelihood estimation of a recursive trivariate
//! model with one continuous and two ordinal outcomes, correlated errors,
//! and a structural-equation-model first stage producing latent factor
//! scores. Includes a generative simulator, marginal effects, and
//! model-comparison statistics.
// `!(x > 0.0)` is used deliberately where NaN must take the failure branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod error;
pub mod estimate;
pub mod inference;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod sem;
pub mod simulate;

pub use error::{Error, Result};
