pub mod augmentation;
pub mod cam;
pub mod config;
pub mod corpus;
pub mod densenet;
pub mod error;
pub mod features;
pub mod labels;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod tritrain;

pub use error::{Error, Result};
