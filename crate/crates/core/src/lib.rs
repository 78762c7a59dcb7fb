//! Sparse mixture-of-experts routing with capacity-limited dispatch,
//! intra-group and fill-in rectification, and a three-stage aspect-based
//! sentiment analysis pipeline built on top of it.

pub mod autodiff;
pub mod error;
pub mod metrics;
pub mod moe;
pub mod nn;
pub mod pipeline;
pub mod text;

pub use error::{Error, Result};
