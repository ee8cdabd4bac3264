//! Nested multi-agent deep Q-learning for protective relays on a radial
//! distribution feeder, with a fixed-threshold overcurrent baseline and an
//! evaluation harness.

pub mod baseline;
pub mod dqn;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod feeder;
pub mod server;
pub mod trainer;

pub use error::{Error, Result};
