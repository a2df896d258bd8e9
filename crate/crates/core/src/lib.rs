//! U-Lite: a lightweight segmentation network built from axial depthwise
//! convolutions, with a CPU training stack written from scratch.
//!
//! Layout:
//! - [`tensor`], [`ops`], [`param`], [`rng`]: NCHW tensors, elementwise math,
//!   gradient slots and seeded randomness.
//! - [`nn`]: layers with explicit forward and backward passes.
//! - [`arch`]: the axial module, bottleneck, full model, parameter counter and
//!   ablation variants.
//! - [`train`]: Dice loss, Adam, augmentation, the training loop and
//!   checkpoints.
//! - [`metrics`]: binarization and Dice / IoU scores.
//! - [`data`]: PNG pairs, splits and the synthetic blob dataset.

pub mod ablation;
pub mod arch;
pub mod atomic;
pub mod data;
pub mod element;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod param;
pub mod rng;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use element::Element;
pub use error::{Error, Result};
pub use param::Param;
pub use rng::Rng;
pub use tensor::{Dims, Tensor};
