pub mod cli;
pub mod data;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod refine;

pub use error::{Error, Result};
pub use mask::Mask;
pub use nn::{Scalar, Tensor};
