pub mod acquisition;
pub mod clustering;
pub mod data;
pub mod epinet;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod scheduler;
pub mod stats;

pub use error::{Error, Result};
pub use matrix::Matrix;
