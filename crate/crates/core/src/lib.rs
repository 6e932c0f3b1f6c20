//! Differentially private data generative models.
pub mod attacks;
pub mod data;
pub mod dp;
pub mod error;
pub mod fedsim;
pub mod genmodels;
pub mod nn;
mod serde_util;

pub use error::{Error, Result};

/// Version of this crate, recorded in run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
