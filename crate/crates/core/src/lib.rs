//! Deformation-free cross-domain image registration.
//!
//! Images are factored into a domain-invariant scene map and a global
//! appearance code; the registered output is the moving image's scene
//! re-rendered with the fixed image's appearance through AdaIN, with a
//! temporal position encoding shared across frames of a sequence.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
