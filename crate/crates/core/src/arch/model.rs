//! The full encoder / bottleneck / decoder network.
//!
//! Feature level `i` has `widths[i]` channels at `1 / 2^i` resolution:
//!
//! ```text
//! f0 = stem(x)                      3 -> C0, full resolution
//! fi = enc_i(maxpool(f{i-1}))       C{i-1} -> Ci, i = 1..5
//! b  = bottleneck(f5)               C5 -> Cb, 1/32
//! d4 = dec4(cat(up(b),  f4))        Cb + C4 -> C4
//! di = dec_i(cat(up(d{i+1}), fi))   C{i+1} + Ci -> Ci, i = 3..0
//! y  = sigmoid(head(d0))            C0 -> 1
//! ```

use super::bottleneck::{Bottleneck, BottleneckCache};
use super::config::{ModelConfig, LEVELS};
use super::module::{AxialDwModule, ModuleCache};
use super::{Named, ParamSet};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::{
    concat_channels, max_pool2_backward, max_pool2_with_indices, sigmoid, sigmoid_backward,
    split_channels, upsample2, upsample2_backward, Mode, PointwiseConv, PoolIndices,
};
use crate::param::Param;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const INPUT_CHANNELS: usize = 3;
/// Spatial sides must be multiples of this.
pub const SIZE_MULTIPLE: usize = 64;

#[derive(Clone, Debug)]
pub struct ULite<T = f32> {
    config: ModelConfig,
    pub stem: AxialDwModule<T>,
    /// `enc1 ..= enc5`, each preceded by a 2x2 max-pool.
    pub encoders: Vec<AxialDwModule<T>>,
    pub bottleneck: Bottleneck<T>,
    /// Application order: deepest first (`dec4`, ..., `dec0`).
    pub decoders: Vec<AxialDwModule<T>>,
    pub head: PointwiseConv<T>,
}

/// Everything the backward pass needs from one training forward.
#[derive(Clone, Debug)]
pub struct ForwardCache<T = f32> {
    stem: ModuleCache<T>,
    pools: Vec<PoolIndices>,
    encoders: Vec<ModuleCache<T>>,
    bottleneck: BottleneckCache<T>,
    decoders: Vec<(usize, ModuleCache<T>)>,
    head_in: Tensor<T>,
    output: Tensor<T>,
}

impl<T: Element> ForwardCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

impl<T: Element> ULite<T> {
    /// Builds and initialises every layer in definition order from
    /// `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let w = config.widths;
        let (v, n) = (config.dw_variant, config.n);

        let stem = AxialDwModule::init(v, INPUT_CHANNELS, w[0], n, &mut rng)?;
        let encoders = (1..LEVELS)
            .map(|i| AxialDwModule::init(v, w[i - 1], w[i], n, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let bottleneck = Bottleneck::init(w[LEVELS - 1], config.bottleneck_width, config.addc, &mut rng)?;
        let decoders = (0..LEVELS - 1)
            .rev()
            .map(|i| {
                let below = if i == LEVELS - 2 {
                    config.bottleneck_width
                } else {
                    w[i + 1]
                };
                AxialDwModule::init(v, below + w[i], w[i], n, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let head = PointwiseConv::init(w[0], 1, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            stem,
            encoders,
            bottleneck,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let d = x.dims();
        if d.c != INPUT_CHANNELS {
            return Err(Error::shape(format!(
                "model expects {INPUT_CHANNELS} input channels, got {d}"
            )));
        }
        if d.h % SIZE_MULTIPLE != 0 || d.w % SIZE_MULTIPLE != 0 {
            return Err(Error::shape(format!(
                "spatial dims of {d} must be multiples of {SIZE_MULTIPLE}"
            )));
        }
        Ok(())
    }

    /// Level of decoder `k` in application order.
    fn decoder_level(k: usize) -> usize {
        LEVELS - 2 - k
    }

    /// Forward pass keeping the intermediates for [`ULite::backward`].
    /// In training mode batch-norm running statistics are updated.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let (f0, stem) = self.stem.forward(x, mode)?;
        let mut feats = vec![f0];
        let mut pools = Vec::with_capacity(LEVELS - 1);
        let mut encoders = Vec::with_capacity(LEVELS - 1);
        for enc in &mut self.encoders {
            let (pooled, idx) = max_pool2_with_indices(feats.last().unwrap())?;
            let (f, cache) = enc.forward(&pooled, mode)?;
            pools.push(idx);
            encoders.push(cache);
            feats.push(f);
        }
        let (mut d, bottleneck) = self.bottleneck.forward(&feats[LEVELS - 1], mode)?;
        let mut decoders = Vec::with_capacity(LEVELS - 1);
        for (k, dec) in self.decoders.iter_mut().enumerate() {
            let up = upsample2(&d);
            let up_channels = up.dims().c;
            let cat = concat_channels(&up, &feats[Self::decoder_level(k)])?;
            let (out, cache) = dec.forward(&cat, mode)?;
            decoders.push((up_channels, cache));
            d = out;
        }
        let output = sigmoid(&self.head.forward(&d)?);
        Ok(ForwardCache {
            stem,
            pools,
            encoders,
            bottleneck,
            decoders,
            head_in: d,
            output,
        })
    }

    /// Accumulates parameter gradients for `grad_out` (gradient of the loss
    /// with respect to the probability mask) and returns the input gradient.
    pub fn backward(&mut self, cache: &ForwardCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = sigmoid_backward(&cache.output, grad_out)?;
        let mut g = self.head.backward(&cache.head_in, &g)?;

        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; LEVELS - 1];
        for (k, dec) in self.decoders.iter_mut().enumerate().rev() {
            let (up_channels, dc) = &cache.decoders[k];
            let g_cat = dec.backward(dc, &g)?;
            let (g_up, g_skip) = split_channels(&g_cat, *up_channels)?;
            skip_grads[Self::decoder_level(k)] = Some(g_skip);
            g = upsample2_backward(&g_up)?;
        }

        let mut g = self.bottleneck.backward(&cache.bottleneck, &g)?;
        for i in (0..LEVELS - 1).rev() {
            let g_pooled = self.encoders[i].backward(&cache.encoders[i], &g)?;
            g = max_pool2_backward(&cache.pools[i], &g_pooled)?;
            if let Some(s) = &skip_grads[i] {
                g.accumulate(s)?;
            }
        }
        self.stem.backward(&cache.stem, &g)
    }

    /// Evaluation-mode prediction; leaves the model untouched.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let feats = self.features(x)?;
        self.infer_from_features(&feats)
    }

    /// Evaluation-mode encoder features `f0 ..= f5`.
    pub fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        let mut feats = vec![self.stem.infer(x)?];
        for enc in &self.encoders {
            let pooled = crate::nn::max_pool2(feats.last().unwrap())?;
            feats.push(enc.infer(&pooled)?);
        }
        Ok(feats)
    }

    /// Bottleneck and decoder applied to precomputed features. `feats[5]`
    /// feeds the bottleneck; `feats[0..5]` are the skip connections.
    pub fn infer_from_features(&self, feats: &[Tensor<T>]) -> Result<Tensor<T>> {
        if feats.len() != LEVELS {
            return Err(Error::input(format!("expected {LEVELS} feature levels, got {}", feats.len())));
        }
        let mut d = self.bottleneck.infer(&feats[LEVELS - 1])?;
        for (k, dec) in self.decoders.iter().enumerate() {
            let cat = concat_channels(&upsample2(&d), &feats[Self::decoder_level(k)])?;
            d = dec.infer(&cat)?;
        }
        Ok(sigmoid(&self.head.forward(&d)?))
    }

    pub fn named_params(&self) -> Vec<Named<&Param<T>>> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<Named<&mut Param<T>>> {
        let mut out = Vec::new();
        self.collect_params_mut("", &mut out);
        out
    }

    pub fn named_buffers(&self) -> Vec<Named<&Tensor<T>>> {
        let mut out = Vec::new();
        self.collect_buffers("", &mut out);
        out
    }

    pub fn named_buffers_mut(&mut self) -> Vec<Named<&mut Tensor<T>>> {
        let mut out = Vec::new();
        self.collect_buffers_mut("", &mut out);
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    pub fn cast<U: Element>(&self) -> ULite<U> {
        ULite {
            config: self.config.clone(),
            stem: self.stem.cast(),
            encoders: self.encoders.iter().map(AxialDwModule::cast).collect(),
            bottleneck: self.bottleneck.cast(),
            decoders: self.decoders.iter().map(AxialDwModule::cast).collect(),
            head: self.head.cast(),
        }
    }

    fn module_names() -> (Vec<String>, Vec<String>) {
        let enc = (1..LEVELS).map(|i| format!("enc{i}")).collect();
        let dec = (0..LEVELS - 1)
            .map(|k| format!("dec{}", Self::decoder_level(k)))
            .collect();
        (enc, dec)
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Element> ParamSet<T> for ULite<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Param<T>>>) {
        let (enc, dec) = Self::module_names();
        self.stem.collect_params(&join(prefix, "stem"), out);
        for (m, name) in self.encoders.iter().zip(&enc) {
            m.collect_params(&join(prefix, name), out);
        }
        self.bottleneck.collect_params(&join(prefix, "bottleneck"), out);
        for (m, name) in self.decoders.iter().zip(&dec) {
            m.collect_params(&join(prefix, name), out);
        }
        let [w, b] = self.head.params();
        out.push((join(prefix, "head.weight"), w));
        out.push((join(prefix, "head.bias"), b));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Param<T>>>) {
        let (enc, dec) = Self::module_names();
        self.stem.collect_params_mut(&join(prefix, "stem"), out);
        for (m, name) in self.encoders.iter_mut().zip(&enc) {
            m.collect_params_mut(&join(prefix, name), out);
        }
        self.bottleneck.collect_params_mut(&join(prefix, "bottleneck"), out);
        for (m, name) in self.decoders.iter_mut().zip(&dec) {
            m.collect_params_mut(&join(prefix, name), out);
        }
        let [w, b] = self.head.params_mut();
        out.push((join(prefix, "head.weight"), w));
        out.push((join(prefix, "head.bias"), b));
    }

    fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor<T>>>) {
        let (enc, dec) = Self::module_names();
        self.stem.collect_buffers(&join(prefix, "stem"), out);
        for (m, name) in self.encoders.iter().zip(&enc) {
            m.collect_buffers(&join(prefix, name), out);
        }
        self.bottleneck.collect_buffers(&join(prefix, "bottleneck"), out);
        for (m, name) in self.decoders.iter().zip(&dec) {
            m.collect_buffers(&join(prefix, name), out);
        }
    }

    fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor<T>>>) {
        let (enc, dec) = Self::module_names();
        self.stem.collect_buffers_mut(&join(prefix, "stem"), out);
        for (m, name) in self.encoders.iter_mut().zip(&enc) {
            m.collect_buffers_mut(&join(prefix, name), out);
        }
        self.bottleneck.collect_buffers_mut(&join(prefix, "bottleneck"), out);
        for (m, name) in self.decoders.iter_mut().zip(&dec) {
            m.collect_buffers_mut(&join(prefix, name), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            widths: [2, 3, 4, 4, 5, 6],
            bottleneck_width: 4,
            n: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn output_shape_and_range() {
        let model = ULite::<f32>::new(&small()).unwrap();
        let x = Tensor::rand_uniform([2, 3, 64, 64], &mut Rng::new(1), 0.0, 1.0).unwrap();
        let y = model.infer(&x).unwrap();
        assert_eq!(y.shape(), [2, 1, 64, 64]);
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn feature_pyramid_dims() {
        let cfg = small();
        let model = ULite::<f32>::new(&cfg).unwrap();
        let x = Tensor::zeros([1, 3, 128, 64]).unwrap();
        let feats = model.features(&x).unwrap();
        for (i, f) in feats.iter().enumerate() {
            assert_eq!(f.shape(), [1, cfg.widths[i], 128 >> i, 64 >> i]);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let model = ULite::<f32>::new(&small()).unwrap();
        assert!(model.infer(&Tensor::zeros([1, 3, 96, 64]).unwrap()).is_err());
        assert!(model.infer(&Tensor::zeros([1, 3, 32, 32]).unwrap()).is_err());
        assert!(model.infer(&Tensor::zeros([1, 1, 64, 64]).unwrap()).is_err());
    }

    #[test]
    fn param_names_unique_and_ordered() {
        let model = ULite::<f32>::new(&small()).unwrap();
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.first().unwrap(), "stem.dw_h.kernel");
        assert_eq!(names.last().unwrap(), "head.bias");
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.iter().any(|n| n == "dec4.pw.weight"));
        assert!(names.iter().any(|n| n == "bottleneck.branch2.dw_v.kernel"));
    }

    #[test]
    fn train_and_eval_forward_agree_on_eval_mode() {
        let mut model = ULite::<f32>::new(&small()).unwrap();
        let x = Tensor::rand_uniform([1, 3, 64, 64], &mut Rng::new(2), 0.0, 1.0).unwrap();
        let cached = model.forward(&x, Mode::Eval).unwrap();
        assert_eq!(cached.output(), &model.infer(&x).unwrap());
    }
}
