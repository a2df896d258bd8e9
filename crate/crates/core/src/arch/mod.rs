//! Network assembly, parameter accounting and ablation variants.

mod bottleneck;
mod config;
mod count;
mod footprint;
mod model;
mod module;
mod variants;

pub use bottleneck::{AxialPair, Bottleneck, BottleneckCache, DILATED_KERNEL, DILATIONS, PLAIN_KERNEL};
pub use config::{DwVariant, ModelConfig, LEVELS};
pub use count::{
    batch_norm_count, count_config, count_params, depthwise_count, module_count, pointwise_count,
    LayerCount, ParamReport,
};
pub use footprint::{module_footprint, pair_footprint, Footprint};
pub use model::{ForwardCache, ULite, INPUT_CHANNELS, SIZE_MULTIPLE};
pub use module::{AxialDwModule, Mixer, ModuleCache};
pub use variants::{list_variants, Variant};

use crate::param::Param;
use crate::tensor::Tensor;

/// A value tagged with its dotted path, e.g. `enc3.pw.weight`.
pub type Named<V> = (String, V);

/// Enumerates learnable parameters and buffers in definition order.
pub trait ParamSet<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Param<T>>>);
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Param<T>>>);
    fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor<T>>>);
    fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor<T>>>);
}
