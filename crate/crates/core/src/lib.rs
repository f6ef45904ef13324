pub mod actor_critic;
pub mod cli;
pub mod config;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod nn;
pub mod off_policy;
pub mod pgr;
pub mod selfcheck;
pub mod train;

pub use error::{Error, Result};
