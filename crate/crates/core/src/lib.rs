pub mod augment;
pub mod backend;
pub mod cli;
pub mod error;
pub mod frontend;
pub mod metrics;
pub mod modelmath;
pub mod trainer;
pub mod seed;

pub use error::{Error, Result};
