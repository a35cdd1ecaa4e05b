//! Training environment and learner for world-model-reconstruction locomotion.

pub mod checkpoint;
pub mod command;
pub mod config;
pub mod env;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod nets;
pub mod obs;
pub mod ppo;
pub mod reward;

pub use error::{Result, WmrError};
