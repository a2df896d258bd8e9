//! The axial depthwise convolution module and its square ablation twin.
//!
//! ```text
//! x' = x + DW_1xn(x) + DW_nx1(x)        (axial)
//! x' = x + DW_nxn(x)                    (square)
//! y  = GELU(PW_{c1 -> c2}(BN(x')))
//! ```

use super::config::DwVariant;
use super::{Named, ParamSet};
use crate::element::Element;
use crate::error::Result;
use crate::nn::{gelu, gelu_backward, BatchNorm, BatchNormCache, DepthwiseConv, Mode, PointwiseConv};
use crate::ops::add;
use crate::param::Param;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum Mixer<T = f32> {
    Axial {
        /// `1 x n`
        horizontal: DepthwiseConv<T>,
        /// `n x 1`
        vertical: DepthwiseConv<T>,
    },
    Square(DepthwiseConv<T>),
}

impl<T: Element> Mixer<T> {
    pub fn init(variant: DwVariant, channels: usize, n: usize, rng: &mut Rng) -> Result<Self> {
        Ok(match variant {
            DwVariant::Axial => Mixer::Axial {
                horizontal: DepthwiseConv::init(channels, 1, n, 1, rng)?,
                vertical: DepthwiseConv::init(channels, n, 1, 1, rng)?,
            },
            DwVariant::Square => Mixer::Square(DepthwiseConv::init(channels, n, n, 1, rng)?),
        })
    }

    pub fn variant(&self) -> DwVariant {
        match self {
            Mixer::Axial { .. } => DwVariant::Axial,
            Mixer::Square(_) => DwVariant::Square,
        }
    }

    /// Residual sum `x + conv(x) [+ conv(x)]`, added left to right.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Mixer::Axial {
                horizontal,
                vertical,
            } => add(&add(x, &horizontal.forward(x)?)?, &vertical.forward(x)?),
            Mixer::Square(conv) => add(x, &conv.forward(x)?),
        }
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut gx = grad_out.clone();
        match self {
            Mixer::Axial {
                horizontal,
                vertical,
            } => {
                gx.accumulate(&horizontal.backward(x, grad_out)?)?;
                gx.accumulate(&vertical.backward(x, grad_out)?)?;
            }
            Mixer::Square(conv) => gx.accumulate(&conv.backward(x, grad_out)?)?,
        }
        Ok(gx)
    }

    fn convs(&self) -> Vec<(&'static str, &DepthwiseConv<T>)> {
        match self {
            Mixer::Axial {
                horizontal,
                vertical,
            } => vec![("dw_h", horizontal), ("dw_v", vertical)],
            Mixer::Square(conv) => vec![("dw", conv)],
        }
    }

    fn convs_mut(&mut self) -> Vec<(&'static str, &mut DepthwiseConv<T>)> {
        match self {
            Mixer::Axial {
                horizontal,
                vertical,
            } => vec![("dw_h", horizontal), ("dw_v", vertical)],
            Mixer::Square(conv) => vec![("dw", conv)],
        }
    }

    fn cast<U: Element>(&self) -> Mixer<U> {
        match self {
            Mixer::Axial {
                horizontal,
                vertical,
            } => Mixer::Axial {
                horizontal: horizontal.cast(),
                vertical: vertical.cast(),
            },
            Mixer::Square(conv) => Mixer::Square(conv.cast()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AxialDwModule<T = f32> {
    pub mixer: Mixer<T>,
    pub bn: BatchNorm<T>,
    pub pw: PointwiseConv<T>,
}

#[derive(Clone, Debug)]
pub struct ModuleCache<T = f32> {
    x: Tensor<T>,
    bn: BatchNormCache<T>,
    normed: Tensor<T>,
    pre_act: Tensor<T>,
}

impl<T: Element> AxialDwModule<T> {
    pub fn init(
        variant: DwVariant,
        c_in: usize,
        c_out: usize,
        n: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            mixer: Mixer::init(variant, c_in, n, rng)?,
            bn: BatchNorm::new(c_in)?,
            pw: PointwiseConv::init(c_in, c_out, rng)?,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.bn.channels()
    }

    pub fn out_channels(&self) -> usize {
        self.pw.out_channels()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ModuleCache<T>)> {
        let mixed = self.mixer.forward(x)?;
        let (normed, bn) = self.bn.forward(&mixed, mode)?;
        let pre_act = self.pw.forward(&normed)?;
        let y = gelu(&pre_act);
        Ok((
            y,
            ModuleCache {
                x: x.clone(),
                bn,
                normed,
                pre_act,
            },
        ))
    }

    /// Evaluation-mode forward without saving anything for backward.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mixed = self.mixer.forward(x)?;
        let normed = self.bn.forward_eval(&mixed)?;
        Ok(gelu(&self.pw.forward(&normed)?))
    }

    pub fn backward(&mut self, cache: &ModuleCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = gelu_backward(&cache.pre_act, grad_out)?;
        let g = self.pw.backward(&cache.normed, &g)?;
        let g = self.bn.backward(&cache.bn, &g)?;
        self.mixer.backward(&cache.x, &g)
    }

    pub fn cast<U: Element>(&self) -> AxialDwModule<U> {
        AxialDwModule {
            mixer: self.mixer.cast(),
            bn: self.bn.cast(),
            pw: self.pw.cast(),
        }
    }
}

impl<T: Element> ParamSet<T> for AxialDwModule<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Param<T>>>) {
        for (name, conv) in self.mixer.convs() {
            let [k, b] = conv.params();
            out.push((format!("{prefix}.{name}.kernel"), k));
            out.push((format!("{prefix}.{name}.bias"), b));
        }
        let [g, b] = self.bn.params();
        out.push((format!("{prefix}.bn.gamma"), g));
        out.push((format!("{prefix}.bn.beta"), b));
        let [w, b] = self.pw.params();
        out.push((format!("{prefix}.pw.weight"), w));
        out.push((format!("{prefix}.pw.bias"), b));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Param<T>>>) {
        for (name, conv) in self.mixer.convs_mut() {
            let [k, b] = conv.params_mut();
            out.push((format!("{prefix}.{name}.kernel"), k));
            out.push((format!("{prefix}.{name}.bias"), b));
        }
        let [g, b] = self.bn.params_mut();
        out.push((format!("{prefix}.bn.gamma"), g));
        out.push((format!("{prefix}.bn.beta"), b));
        let [w, b] = self.pw.params_mut();
        out.push((format!("{prefix}.pw.weight"), w));
        out.push((format!("{prefix}.pw.bias"), b));
    }

    fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor<T>>>) {
        let [m, v] = self.bn.buffers();
        out.push((format!("{prefix}.bn.running_mean"), m));
        out.push((format!("{prefix}.bn.running_var"), v));
    }

    fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor<T>>>) {
        let [m, v] = self.bn.buffers_mut();
        out.push((format!("{prefix}.bn.running_mean"), m));
        out.push((format!("{prefix}.bn.running_var"), v));
    }
}
