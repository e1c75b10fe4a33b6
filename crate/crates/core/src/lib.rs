// Negated float comparisons are how inputs reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod protocols;
pub mod quantizer;

pub use error::{Error, Result};
