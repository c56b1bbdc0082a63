pub mod agent;
pub mod envs;
pub mod error;
pub mod model;
pub mod numerics;
pub mod sampler;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
