//! Frequency-domain iterative learning control with complex-valued
//! Gaussian-process models of parameter-varying MIMO plants.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cgpr;
pub mod convergence;
pub mod error;
pub mod harness;
pub mod ilc;
pub mod optimize;
pub mod par;
pub mod plant;
pub mod signals;

pub use error::{Error, Result};
