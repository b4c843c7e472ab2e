pub mod config;
pub mod error;
pub mod filters;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod restorer;
pub mod study;
pub mod tiler;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
