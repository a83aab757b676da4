//! Reverse-mode automatic differentiation over dense tensors.

mod conv;
mod gradcheck;
mod ops;
mod scalar;
mod tensor;

pub use gradcheck::{finite_difference_check, CheckConfig, CheckReport, EntryError};
pub use ops::Reduction;
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;
