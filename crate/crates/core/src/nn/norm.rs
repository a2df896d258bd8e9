use rayon::prelude::*;

use super::kernels::{dot, sum};
use super::Mode;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::param::Param;
use crate::tensor::{Dims, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel batch normalization.
///
/// Training normalizes with the batch mean and population variance over
/// `(N, H, W)` and folds both into the running statistics:
/// `running = (1 - momentum) * running + momentum * batch`.
/// Evaluation normalizes with the running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm<T = f32> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

/// Saved forward state for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T = f32> {
    mode: Mode,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Element> BatchNorm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Param::new(Tensor::full([1, channels, 1, 1], T::one())?),
            beta: Param::new(Tensor::zeros([1, channels, 1, 1])?),
            running_mean: Tensor::zeros([1, channels, 1, 1])?,
            running_var: Tensor::full([1, channels, 1, 1], T::one())?,
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.dims().c
    }

    /// Learnable count: gamma and beta.
    pub fn param_count(&self) -> usize {
        2 * self.channels()
    }

    /// Running mean and variance; not learnable.
    pub fn buffer_count(&self) -> usize {
        2 * self.channels()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.dims().c != self.channels() {
            return Err(Error::shape(format!(
                "batch norm expects {} channels, input is {}",
                self.channels(),
                x.dims()
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.forward_eval_cached(x),
        }
    }

    /// Normalizes with batch statistics and updates the running statistics.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        self.check_input(x)?;
        let d = x.dims();
        let count = T::lit((d.n * d.plane()) as f64);
        let eps = T::lit(self.eps);

        let stats: Vec<(T, T)> = (0..d.c)
            .into_par_iter()
            .map(|c| {
                let mut s = T::zero();
                for n in 0..d.n {
                    s = s + sum(x.plane(n, c));
                }
                let mean = s / count;
                let mut sq = T::zero();
                for n in 0..d.n {
                    let centered: Vec<T> = x.plane(n, c).iter().map(|&v| v - mean).collect();
                    sq = sq + dot(&centered, &centered);
                }
                (mean, sq / count)
            })
            .collect();

        let inv_std: Vec<T> = stats
            .iter()
            .map(|&(_, var)| T::one() / (var + eps).sqrt())
            .collect();
        let means: Vec<T> = stats.iter().map(|&(m, _)| m).collect();
        let xhat = normalize(x, &means, &inv_std);
        let y = self.affine(&xhat);

        let m = T::lit(self.momentum);
        let keep = T::one() - m;
        for (c, &(mean, var)) in stats.iter().enumerate() {
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = keep * *rm + m * mean;
            let rv = &mut self.running_var.data_mut()[c];
            *rv = keep * *rv + m * var;
        }

        Ok((
            y,
            BatchNormCache {
                mode: Mode::Train,
                xhat,
                inv_std,
            },
        ))
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.affine(&self.eval_normalize(x)?.0))
    }

    fn forward_eval_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let (xhat, inv_std) = self.eval_normalize(x)?;
        let y = self.affine(&xhat);
        Ok((
            y,
            BatchNormCache {
                mode: Mode::Eval,
                xhat,
                inv_std,
            },
        ))
    }

    fn eval_normalize(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
        self.check_input(x)?;
        let eps = T::lit(self.eps);
        let inv_std: Vec<T> = self
            .running_var
            .data()
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        Ok((normalize(x, self.running_mean.data(), &inv_std), inv_std))
    }

    fn affine(&self, xhat: &Tensor<T>) -> Tensor<T> {
        let d = xhat.dims();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut out = xhat.clone();
        out.data_mut()
            .par_chunks_mut(d.plane())
            .enumerate()
            .for_each(|(plane, p)| {
                let c = plane % d.c;
                let (g, b) = (gamma[c], beta[c]);
                p.iter_mut().for_each(|v| *v = g * *v + b);
            });
        out
    }

    /// Accumulates gamma and beta gradients; returns the input gradient.
    ///
    /// In training mode the gradient flows through the batch statistics;
    /// in evaluation mode the layer is a fixed per-channel affine map.
    pub fn backward(&mut self, cache: &BatchNormCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let d = cache.xhat.dims();
        grad_out.expect_dims(d, "batch norm grad")?;
        let count = T::lit((d.n * d.plane()) as f64);
        let gamma = self.gamma.value.data();
        let xhat = &cache.xhat;

        let sums: Vec<(T, T)> = (0..d.c)
            .into_par_iter()
            .map(|c| {
                let mut sg = T::zero();
                let mut sgx = T::zero();
                for n in 0..d.n {
                    sg = sg + sum(grad_out.plane(n, c));
                    sgx = sgx + dot(grad_out.plane(n, c), xhat.plane(n, c));
                }
                (sg, sgx)
            })
            .collect();

        let mut gx = vec![T::zero(); d.numel()];
        gx.par_chunks_mut(d.plane())
            .enumerate()
            .for_each(|(plane, gxp)| {
                let (n, c) = (plane / d.c, plane % d.c);
                let g = grad_out.plane(n, c);
                let scale = gamma[c] * cache.inv_std[c];
                match cache.mode {
                    Mode::Train => {
                        let (sg, sgx) = sums[c];
                        let xh = xhat.plane(n, c);
                        let k = scale / count;
                        for ((o, &gi), &xi) in gxp.iter_mut().zip(g).zip(xh) {
                            *o = k * (count * gi - sg - xi * sgx);
                        }
                    }
                    Mode::Eval => {
                        for (o, &gi) in gxp.iter_mut().zip(g) {
                            *o = scale * gi;
                        }
                    }
                }
            });

        for (c, &(sg, sgx)) in sums.iter().enumerate() {
            let gg = &mut self.gamma.grad.data_mut()[c];
            *gg = *gg + sgx;
            let gb = &mut self.beta.grad.data_mut()[c];
            *gb = *gb + sg;
        }
        Ok(Tensor::from_parts(d, gx))
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn buffers(&self) -> [&Tensor<T>; 2] {
        [&self.running_mean, &self.running_var]
    }

    pub fn buffers_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [&mut self.running_mean, &mut self.running_var]
    }

    pub fn cast<U: Element>(&self) -> BatchNorm<U> {
        BatchNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

fn normalize<T: Element>(x: &Tensor<T>, means: &[T], inv_std: &[T]) -> Tensor<T> {
    let d: Dims = x.dims();
    let mut out = x.clone();
    out.data_mut()
        .par_chunks_mut(d.plane())
        .enumerate()
        .for_each(|(plane, p)| {
            let c = plane % d.c;
            let (m, s) = (means[c], inv_std[c]);
            p.iter_mut().for_each(|v| *v = (*v - m) * s);
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::testutil::{assert_grad_close, numeric_grad, weighted_sum};

    #[test]
    fn constant_input_normalizes_to_zero() {
        let mut bn = BatchNorm::<f32>::new(2).unwrap();
        let x = Tensor::full([2, 2, 3, 3], 3.0).unwrap();
        let (y, _) = bn.forward_train(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_pixel_batch_closed_form() {
        let mut bn = BatchNorm::<f64>::new(1).unwrap();
        let (a, b) = (1.0, 4.0);
        let x = Tensor::from_vec([2, 1, 1, 1], vec![a, b]).unwrap();
        let (y, _) = bn.forward_train(&x).unwrap();
        let half: f64 = (b - a) / 2.0;
        let expected = half / (half * half + 1e-5).sqrt();
        assert!((y.data()[0] + expected).abs() < 1e-12);
        assert!((y.data()[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn eval_with_identity_stats_is_near_identity() {
        let bn = BatchNorm::<f32>::new(3).unwrap();
        let x = Tensor::rand_normal([1, 3, 4, 4], &mut Rng::new(1), 0.0, 1.0).unwrap();
        let y = bn.forward_eval(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs() + 1e-7);
        }
    }

    #[test]
    fn running_stats_track_batch() {
        let mut bn = BatchNorm::<f64>::new(1).unwrap();
        let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        bn.forward_train(&x).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1)).abs() < 1e-12);
        assert!(bn.running_var.data().iter().all(|&v| v >= 0.0));
        assert_eq!(bn.param_count(), 2);
        assert_eq!(bn.buffer_count(), 2);
    }

    #[test]
    fn train_gradients_match_finite_differences() {
        let mut rng = Rng::new(31);
        let mut bn = BatchNorm::<f64>::new(3).unwrap();
        bn.gamma.value = Tensor::rand_normal([1, 3, 1, 1], &mut rng, 1.0, 0.5).unwrap();
        bn.beta.value = Tensor::rand_normal([1, 3, 1, 1], &mut rng, 0.0, 0.5).unwrap();
        let x = Tensor::rand_normal([2, 3, 3, 4], &mut rng, 0.5, 2.0).unwrap();
        let w = Tensor::rand_normal([2, 3, 3, 4], &mut rng, 0.0, 1.0).unwrap();
        let (_, cache) = bn.forward_train(&x).unwrap();
        let gx = bn.backward(&cache, &w).unwrap();

        let base = bn.clone();
        let f = |bn: &BatchNorm<f64>, t: &Tensor<f64>| {
            let mut b = bn.clone();
            weighted_sum(&b.forward_train(t).unwrap().0, &w)
        };
        assert_grad_close(&gx, &numeric_grad(&x, 1e-6, |t| f(&base, t)), 1e-6);
        let num_g = numeric_grad(&base.gamma.value, 1e-6, |g| {
            let mut b = base.clone();
            b.gamma.value = g.clone();
            f(&b, &x)
        });
        assert_grad_close(&bn.gamma.grad, &num_g, 1e-6);
        let num_b = numeric_grad(&base.beta.value, 1e-6, |v| {
            let mut b = base.clone();
            b.beta.value = v.clone();
            f(&b, &x)
        });
        assert_grad_close(&bn.beta.grad, &num_b, 1e-6);
    }

    #[test]
    fn eval_gradients_match_finite_differences() {
        let mut rng = Rng::new(32);
        let mut bn = BatchNorm::<f64>::new(2).unwrap();
        bn.running_mean = Tensor::rand_normal([1, 2, 1, 1], &mut rng, 0.0, 1.0).unwrap();
        bn.running_var = Tensor::full([1, 2, 1, 1], 2.5).unwrap();
        bn.gamma.value = Tensor::rand_normal([1, 2, 1, 1], &mut rng, 1.0, 0.5).unwrap();
        let x = Tensor::rand_normal([1, 2, 3, 3], &mut rng, 0.0, 1.0).unwrap();
        let w = Tensor::rand_normal([1, 2, 3, 3], &mut rng, 0.0, 1.0).unwrap();
        let (_, cache) = bn.forward(&x, Mode::Eval).unwrap();
        let gx = bn.backward(&cache, &w).unwrap();
        let num = numeric_grad(&x, 1e-6, |t| weighted_sum(&bn.forward_eval(t).unwrap(), &w));
        assert_grad_close(&gx, &num, 1e-6);
    }

    #[test]
    fn channel_mismatch() {
        let mut bn = BatchNorm::<f32>::new(2).unwrap();
        assert!(bn.forward_train(&Tensor::zeros([1, 3, 2, 2]).unwrap()).is_err());
    }
}
