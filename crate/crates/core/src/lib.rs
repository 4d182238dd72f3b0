//! Adaptive dropout for blind super-resolution.
//!
//! The crate bundles a small autodiff tensor library ([`tensor`]), the
//! adaptive dropout layer and its variance analysis ([`dropout`],
//! [`variance`]), an SRResNet-style model ([`model`]), a synthetic
//! degradation pipeline ([`degrade`]), the training loop ([`train`]) and the
//! evaluation/diagnostic tools ([`diagnostics`]).

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod degrade;
pub mod diagnostics;
pub mod dropout;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod variance;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
