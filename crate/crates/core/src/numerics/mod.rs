//! Dense tensors with reverse-mode automatic differentiation.

pub mod diag;
pub mod gradcheck;
pub mod nn;
mod ops;
pub mod rng;
mod tensor;

pub use nn::{normalize, NormMode, NormStats};
pub use rng::{Rng, RngState};
pub use tensor::Tensor;
