pub mod autodiff;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod schedule;
pub mod trainer;
pub mod verify;

pub use autodiff::{Precision, Reduction, Scalar, Tensor};
pub use error::{Error, Result};
