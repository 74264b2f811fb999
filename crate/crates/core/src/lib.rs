pub mod actions;
pub mod bench;
pub mod color;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod mask;
pub mod physics;
pub mod policy;
pub mod protocol;
pub mod render;
pub mod scene;
pub mod tensor;

pub use config::BenchConfig;
pub use error::{Error, Result};
