//! Learnable-parameter accounting.
//!
//! [`count_config`] evaluates closed forms per layer from a configuration;
//! [`count_params`] walks the arrays a built model actually allocated. The
//! two must agree exactly.

use std::collections::BTreeMap;
use std::fmt;

use super::bottleneck::{DILATED_KERNEL, DILATIONS, PLAIN_KERNEL};
use super::config::{DwVariant, ModelConfig, LEVELS};
use super::model::{ULite, INPUT_CHANNELS};
use crate::element::Element;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub learnable: usize,
    /// Non-learnable state (batch-norm running statistics).
    pub buffers: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub layers: Vec<LayerCount>,
}

impl ParamReport {
    pub fn total(&self) -> usize {
        self.layers.iter().map(|l| l.learnable).sum()
    }

    pub fn buffers(&self) -> usize {
        self.layers.iter().map(|l| l.buffers).sum()
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>10}  {:>8}", "layer", "params", "buffers")?;
        for l in &self.layers {
            writeln!(f, "{:<width$}  {:>10}  {:>8}", l.name, l.learnable, l.buffers)?;
        }
        writeln!(f, "{:<width$}  {:>10}  {:>8}", "total", self.total(), self.buffers())
    }
}

/// `C * kh * kw + C`
pub fn depthwise_count(channels: usize, kh: usize, kw: usize) -> usize {
    channels * kh * kw + channels
}

/// `C1 * C2 + C2`
pub fn pointwise_count(c_in: usize, c_out: usize) -> usize {
    c_in * c_out + c_out
}

/// Learnable affine parameters; the running statistics are buffers.
pub fn batch_norm_count(channels: usize) -> usize {
    2 * channels
}

/// One encoder/decoder module.
pub fn module_count(variant: DwVariant, c_in: usize, c_out: usize, n: usize) -> usize {
    let mixer = match variant {
        DwVariant::Axial => 2 * depthwise_count(c_in, 1, n),
        DwVariant::Square => depthwise_count(c_in, n, n),
    };
    mixer + batch_norm_count(c_in) + pointwise_count(c_in, c_out)
}

fn push_module(
    layers: &mut Vec<LayerCount>,
    prefix: &str,
    variant: DwVariant,
    c_in: usize,
    c_out: usize,
    n: usize,
) {
    let mut row = |name: &str, learnable: usize, buffers: usize| {
        layers.push(LayerCount {
            name: format!("{prefix}.{name}"),
            learnable,
            buffers,
        })
    };
    match variant {
        DwVariant::Axial => {
            row("dw_h", depthwise_count(c_in, 1, n), 0);
            row("dw_v", depthwise_count(c_in, n, 1), 0);
        }
        DwVariant::Square => row("dw", depthwise_count(c_in, n, n), 0),
    }
    row("bn", batch_norm_count(c_in), 2 * c_in);
    row("pw", pointwise_count(c_in, c_out), 0);
}

/// Closed-form per-layer table for a configuration.
pub fn count_config(cfg: &ModelConfig) -> ParamReport {
    let w = cfg.widths;
    let cb = cfg.bottleneck_width;
    let mut layers = Vec::new();
    push_module(&mut layers, "stem", cfg.dw_variant, INPUT_CHANNELS, w[0], cfg.n);
    for i in 1..LEVELS {
        push_module(&mut layers, &format!("enc{i}"), cfg.dw_variant, w[i - 1], w[i], cfg.n);
    }

    let mut row = |name: String, learnable: usize, buffers: usize| {
        layers.push(LayerCount {
            name,
            learnable,
            buffers,
        })
    };
    row("bottleneck.pw_in".into(), pointwise_count(w[LEVELS - 1], cb), 0);
    let kernels = if cfg.addc {
        vec![DILATED_KERNEL; DILATIONS.len()]
    } else {
        vec![PLAIN_KERNEL]
    };
    for (b, &k) in kernels.iter().enumerate() {
        row(format!("bottleneck.branch{b}.dw_h"), depthwise_count(cb, 1, k), 0);
        row(format!("bottleneck.branch{b}.dw_v"), depthwise_count(cb, k, 1), 0);
    }
    row("bottleneck.bn".into(), batch_norm_count(cb), 2 * cb);
    row("bottleneck.pw_out".into(), pointwise_count(cb, cb), 0);

    for i in (0..LEVELS - 1).rev() {
        let below = if i == LEVELS - 2 { cb } else { w[i + 1] };
        push_module(&mut layers, &format!("dec{i}"), cfg.dw_variant, below + w[i], w[i], cfg.n);
    }
    layers.push(LayerCount {
        name: "head".into(),
        learnable: pointwise_count(w[0], 1),
        buffers: 0,
    });
    ParamReport { layers }
}

/// Per-layer table from the arrays a built model holds. Layers are named by
/// the parameter path without its final component.
pub fn count_params<T: Element>(model: &ULite<T>) -> ParamReport {
    let mut order: Vec<String> = Vec::new();
    let mut learnable: BTreeMap<String, usize> = BTreeMap::new();
    let mut buffers: BTreeMap<String, usize> = BTreeMap::new();
    let layer_of = |name: &str| name.rsplit_once('.').map_or(name, |(l, _)| l).to_string();
    for (name, p) in model.named_params() {
        let layer = layer_of(&name);
        if !learnable.contains_key(&layer) {
            order.push(layer.clone());
        }
        *learnable.entry(layer).or_default() += p.numel();
    }
    for (name, b) in model.named_buffers() {
        *buffers.entry(layer_of(&name)).or_default() += b.numel();
    }
    ParamReport {
        layers: order
            .into_iter()
            .map(|name| LayerCount {
                learnable: learnable[&name],
                buffers: buffers.get(&name).copied().unwrap_or(0),
                name,
            })
            .collect(),
    }
}
