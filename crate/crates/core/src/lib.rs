//! Federated multimodal news recommendation with secure aggregation.
//!
//! The news encoder stays on the server; clients train the user encoder on
//! their own click logs and return gradients only through an additive
//! secret-sharing sum.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod federated;
pub mod model;
pub mod news;
pub mod nn;
pub mod ranking;
pub mod secure_agg;
pub mod user;

pub use error::{Error, Result};
