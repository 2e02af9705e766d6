//! Recurrent adversarial image generation on a small self-contained tensor
//! and reverse-mode differentiation core.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`conv`], [`graph`], [`gradcheck`]: dense arrays, convolution
//!   and its transpose, define-by-run differentiation, finite-difference checks.
//! * [`nn`]: dense, convolutional, convolution-transpose and batch-norm layers.
//! * [`gran`]: the recurrent canvas generator and the convolutional discriminator.
//! * [`train`]: the two-objective adversarial training loop with Adam.
//! * [`gam`]: battles between two trained generator/discriminator pairs.
//! * [`data`] and [`checkpoint`]: datasets, batching, image files and persistence.

pub mod checkpoint;
pub mod conv;
pub mod data;
mod error;
pub mod gradcheck;
pub mod kv;
pub mod gran;
pub mod gam;
pub mod graph;
pub mod nn;
mod scalar;
pub mod tensor;
pub mod verify;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use scalar::{Precision, Scalar, Standard, Wide};
pub use tensor::Tensor;
