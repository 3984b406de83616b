//! Paragraph-citation topic model: a joint Bayesian model of document text
//! and paragraph-level citations, fitted by collapsed Gibbs sampling.

pub mod assign;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod gibbs;
pub mod init;
pub mod math;
pub mod network;
pub mod predict;
pub mod rng;
pub mod simulate;
pub mod state;
pub mod store;

pub use error::{PctmError, Result};
