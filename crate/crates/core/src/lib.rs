//! Multi-head attention fusion network for remaining-useful-life
//! prognostics on turbofan run-to-failure data.

pub mod checkpoint;
pub mod cluster;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod strategy;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use error::{MafnError, Result};
