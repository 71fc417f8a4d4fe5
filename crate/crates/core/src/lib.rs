pub mod curves;
pub mod error;
pub mod fluid;
pub mod harness;
pub mod metrics;
pub mod oracles;
pub mod policies;
pub mod queueing;

pub use error::{Error, Result};
