//! Variational topic inference for multi-sentence report generation.

pub mod config;
pub mod data;
pub mod error;
pub mod generate;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod registry;
pub mod train;

pub use error::{CoreError, Result};
