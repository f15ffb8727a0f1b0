//! Diagnosis of causal abstractions by partitioning the input space into
//! interchange-consistent buckets.

pub mod causal;
pub mod classifier;
pub mod diagnosis;
pub mod error;
pub mod models;
pub mod pipeline;
pub mod search;

pub use error::{Error, Result};
