pub mod analysis;
pub mod engine;
pub mod error;
pub mod harness;
pub mod market;
pub mod strategy;
pub mod topology;

pub use error::{Error, Result};
