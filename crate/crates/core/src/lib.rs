//! System identification of induction-motor dynamics with exogenous inputs.

// negated comparisons are used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod engine;
pub mod error;
pub mod library;
pub mod motor;
pub mod regression;
pub mod transforms;
pub mod tuner;

pub use error::{Error, Result};
