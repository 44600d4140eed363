// Negated comparisons are deliberate: they make NaN fail validation checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autoencoder;
pub mod baseline;
pub mod embed;
pub mod error;
pub mod flow;
pub mod graphdata;
pub mod metrics;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
