pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pema;
pub mod tasks;

pub use error::{Error, Result};
