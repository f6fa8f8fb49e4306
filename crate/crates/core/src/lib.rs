//! Uncertainty-aware flexibility envelopes for building heating systems.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod envelope;
pub mod error;
pub mod instance;
pub mod linalg;
pub mod market;
pub mod model;
pub mod policies;
pub mod provision;
pub mod solver;
pub mod uncertainty;

pub use error::{Error, Result};
