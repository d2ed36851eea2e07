//! Tree-3 tree networks trained with single-route pruned backpropagation,
//! alongside a LeNet-5 baseline.
//!
//! Every hidden weight of a Tree-3 network reaches each output unit through
//! exactly one route, so the gradient of a first-layer filter weight collapses
//! to a product along that route. [`grad::pruned`] materializes only the
//! routes that are active for a given example; [`grad::reference`] is the
//! ordinary chain-rule pass it is checked against.

pub mod data;
pub mod error;
pub mod grad;
pub mod models;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Activation, Real, Tensor};
