//! Layers with explicit forward and backward passes.
//!
//! Each backward adds parameter gradients into the layer's [`Param`]s and
//! returns the gradient with respect to the layer input. Parallel loops split
//! work over independent output planes; every reduction runs in a fixed order,
//! so results are bit-identical at any thread count.
//!
//! [`Param`]: crate::param::Param

mod activation;
mod conv;
mod kernels;
mod norm;
mod resample;

pub use activation::{gelu, gelu_backward, sigmoid, sigmoid_backward};
pub use conv::{DepthwiseConv, PointwiseConv};
pub use norm::{BatchNorm, BatchNormCache};
pub use resample::{
    concat_channels, max_pool2, max_pool2_backward, max_pool2_with_indices, split_channels,
    upsample2, upsample2_backward, PoolIndices,
};

/// Batch-norm behaviour: batch statistics while training, running
/// statistics for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
