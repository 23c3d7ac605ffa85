//! Array arithmetic, reverse-mode differentiation and optimisation.
//!
//! Everything here is generic over [`Element`], implemented for `f32` and `f64`.
//! Training runs in 32-bit; finite-difference checks run in 64-bit.

mod adam;
pub mod checkpoint;
mod element;
pub mod kernels;
mod rng;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use element::{Element, Precision};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
