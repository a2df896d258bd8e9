//! Bottleneck with axial dilated depthwise branches.
//!
//! ```text
//! r  = PW_in(x)                                  (C5 -> Cb)
//! r' = r + sum_d [DW_1x3,d(r) + DW_3x1,d(r)]     d in {1, 2, 3}
//! y  = GELU(PW_out(BN(r')))                      (Cb -> Cb)
//! ```
//!
//! Without the dilated branches a single undilated `1x7` / `7x1` pair is used.

use super::{Named, ParamSet};
use crate::element::Element;
use crate::error::Result;
use crate::nn::{gelu, gelu_backward, BatchNorm, BatchNormCache, DepthwiseConv, Mode, PointwiseConv};
use crate::ops::add;
use crate::param::Param;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DILATIONS: [usize; 3] = [1, 2, 3];
pub const DILATED_KERNEL: usize = 3;
pub const PLAIN_KERNEL: usize = 7;

/// A `1 x k` and `k x 1` depthwise pair sharing one dilation.
#[derive(Clone, Debug)]
pub struct AxialPair<T = f32> {
    pub horizontal: DepthwiseConv<T>,
    pub vertical: DepthwiseConv<T>,
}

impl<T: Element> AxialPair<T> {
    pub fn init(channels: usize, k: usize, dilation: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            horizontal: DepthwiseConv::init(channels, 1, k, dilation, rng)?,
            vertical: DepthwiseConv::init(channels, k, 1, dilation, rng)?,
        })
    }

    pub fn dilation(&self) -> usize {
        self.horizontal.dilation
    }

    /// `h(x) + v(x)` without the residual.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        add(&self.horizontal.forward(x)?, &self.vertical.forward(x)?)
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut gx = self.horizontal.backward(x, grad_out)?;
        gx.accumulate(&self.vertical.backward(x, grad_out)?)?;
        Ok(gx)
    }

    fn cast<U: Element>(&self) -> AxialPair<U> {
        AxialPair {
            horizontal: self.horizontal.cast(),
            vertical: self.vertical.cast(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Bottleneck<T = f32> {
    pub pw_in: PointwiseConv<T>,
    pub branches: Vec<AxialPair<T>>,
    pub bn: BatchNorm<T>,
    pub pw_out: PointwiseConv<T>,
}

#[derive(Clone, Debug)]
pub struct BottleneckCache<T = f32> {
    x: Tensor<T>,
    reduced: Tensor<T>,
    bn: BatchNormCache<T>,
    normed: Tensor<T>,
    pre_act: Tensor<T>,
}

impl<T: Element> Bottleneck<T> {
    pub fn init(c_in: usize, width: usize, dilated: bool, rng: &mut Rng) -> Result<Self> {
        let pw_in = PointwiseConv::init(c_in, width, rng)?;
        let branches = if dilated {
            DILATIONS
                .iter()
                .map(|&d| AxialPair::init(width, DILATED_KERNEL, d, rng))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![AxialPair::init(width, PLAIN_KERNEL, 1, rng)?]
        };
        Ok(Self {
            pw_in,
            branches,
            bn: BatchNorm::new(width)?,
            pw_out: PointwiseConv::init(width, width, rng)?,
        })
    }

    /// True when the dilated branches are present.
    pub fn is_dilated(&self) -> bool {
        self.branches.len() == DILATIONS.len()
    }

    pub fn width(&self) -> usize {
        self.pw_out.out_channels()
    }

    /// `((r + h1(r)) + v1(r)) + h2(r) + ...`, left to right.
    fn mix(&self, r: &Tensor<T>) -> Result<Tensor<T>> {
        let mut acc = r.clone();
        for b in &self.branches {
            acc = add(&acc, &b.horizontal.forward(r)?)?;
            acc = add(&acc, &b.vertical.forward(r)?)?;
        }
        Ok(acc)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BottleneckCache<T>)> {
        let reduced = self.pw_in.forward(x)?;
        let mixed = self.mix(&reduced)?;
        let (normed, bn) = self.bn.forward(&mixed, mode)?;
        let pre_act = self.pw_out.forward(&normed)?;
        let y = gelu(&pre_act);
        Ok((
            y,
            BottleneckCache {
                x: x.clone(),
                reduced,
                bn,
                normed,
                pre_act,
            },
        ))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mixed = self.mix(&self.pw_in.forward(x)?)?;
        let normed = self.bn.forward_eval(&mixed)?;
        Ok(gelu(&self.pw_out.forward(&normed)?))
    }

    pub fn backward(&mut self, cache: &BottleneckCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = gelu_backward(&cache.pre_act, grad_out)?;
        let g = self.pw_out.backward(&cache.normed, &g)?;
        let g = self.bn.backward(&cache.bn, &g)?;
        let mut gr = g.clone();
        for b in &mut self.branches {
            gr.accumulate(&b.backward(&cache.reduced, &g)?)?;
        }
        self.pw_in.backward(&cache.x, &gr)
    }

    pub fn cast<U: Element>(&self) -> Bottleneck<U> {
        Bottleneck {
            pw_in: self.pw_in.cast(),
            branches: self.branches.iter().map(AxialPair::cast).collect(),
            bn: self.bn.cast(),
            pw_out: self.pw_out.cast(),
        }
    }
}

impl<T: Element> ParamSet<T> for Bottleneck<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Param<T>>>) {
        let [w, b] = self.pw_in.params();
        out.push((format!("{prefix}.pw_in.weight"), w));
        out.push((format!("{prefix}.pw_in.bias"), b));
        for (i, br) in self.branches.iter().enumerate() {
            for (name, conv) in [("dw_h", &br.horizontal), ("dw_v", &br.vertical)] {
                let [k, b] = conv.params();
                out.push((format!("{prefix}.branch{i}.{name}.kernel"), k));
                out.push((format!("{prefix}.branch{i}.{name}.bias"), b));
            }
        }
        let [g, b] = self.bn.params();
        out.push((format!("{prefix}.bn.gamma"), g));
        out.push((format!("{prefix}.bn.beta"), b));
        let [w, b] = self.pw_out.params();
        out.push((format!("{prefix}.pw_out.weight"), w));
        out.push((format!("{prefix}.pw_out.bias"), b));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Param<T>>>) {
        let [w, b] = self.pw_in.params_mut();
        out.push((format!("{prefix}.pw_in.weight"), w));
        out.push((format!("{prefix}.pw_in.bias"), b));
        for (i, br) in self.branches.iter_mut().enumerate() {
            for (name, conv) in [("dw_h", &mut br.horizontal), ("dw_v", &mut br.vertical)] {
                let [k, b] = conv.params_mut();
                out.push((format!("{prefix}.branch{i}.{name}.kernel"), k));
                out.push((format!("{prefix}.branch{i}.{name}.bias"), b));
            }
        }
        let [g, b] = self.bn.params_mut();
        out.push((format!("{prefix}.bn.gamma"), g));
        out.push((format!("{prefix}.bn.beta"), b));
        let [w, b] = self.pw_out.params_mut();
        out.push((format!("{prefix}.pw_out.weight"), w));
        out.push((format!("{prefix}.pw_out.bias"), b));
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_grad_close, numeric_grad, weighted_sum};

    #[test]
    fn dilations_are_one_two_three() {
        let b = Bottleneck::<f32>::init(8, 4, true, &mut Rng::new(0)).unwrap();
        let ds: Vec<usize> = b.branches.iter().map(AxialPair::dilation).collect();
        assert_eq!(ds, DILATIONS);
        assert!(b.branches.iter().all(|p| p.horizontal.kernel_size() == (1, 3)));
        let plain = Bottleneck::<f32>::init(8, 4, false, &mut Rng::new(0)).unwrap();
        assert_eq!(plain.branches.len(), 1);
        assert_eq!(plain.branches[0].vertical.kernel_size(), (7, 1));
    }

    #[test]
    fn zero_branches_reduce_to_pointwise_path() {
        let mut b = Bottleneck::<f32>::init(6, 4, true, &mut Rng::new(1)).unwrap();
        for br in &mut b.branches {
            br.horizontal.kernel.value.fill(0.0);
            br.vertical.kernel.value.fill(0.0);
        }
        let x = Tensor::rand_normal([2, 6, 4, 4], &mut Rng::new(2), 0.0, 1.0).unwrap();
        let expected = {
            let mut bn = b.bn.clone();
            let r = b.pw_in.forward(&x).unwrap();
            gelu(&b.pw_out.forward(&bn.forward_train(&r).unwrap().0).unwrap())
        };
        assert_eq!(b.forward(&x, Mode::Train).unwrap().0, expected);
    }

    #[test]
    fn spatial_dims_preserved() {
        let mut b = Bottleneck::<f32>::init(6, 4, true, &mut Rng::new(1)).unwrap();
        let x = Tensor::zeros([1, 6, 2, 2]).unwrap();
        assert_eq!(b.forward(&x, Mode::Train).unwrap().0.shape(), [1, 4, 2, 2]);
        assert!(b.infer(&Tensor::zeros([1, 5, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for dilated in [true, false] {
            let mut rng = Rng::new(40);
            let mut b = Bottleneck::<f64>::init(3, 2, dilated, &mut rng).unwrap();
            let x = Tensor::rand_normal([2, 3, 4, 5], &mut rng, 0.0, 1.0).unwrap();
            let w = Tensor::rand_normal([2, 2, 4, 5], &mut rng, 0.0, 1.0).unwrap();
            let (_, cache) = b.forward(&x, Mode::Train).unwrap();
            let gx = b.backward(&cache, &w).unwrap();
            let base = b.clone();
            let num = numeric_grad(&x, 1e-6, |t| {
                let mut bb = base.clone();
                weighted_sum(&bb.forward(t, Mode::Train).unwrap().0, &w)
            });
            assert_grad_close(&gx, &num, 1e-6);
        }
    }
}
