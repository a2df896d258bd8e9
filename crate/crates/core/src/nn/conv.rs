use rayon::prelude::*;

use super::kernels::{axpy, dot, sum};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::param::Param;
use crate::rng::Rng;
use crate::tensor::{Dims, Tensor};

/// Per-channel 2-D cross-correlation with zero "same" padding, stride 1 and
/// dilation `d`.
///
/// The kernel is stored as `(C, 1, kh, kw)` and the bias as `(1, C, 1, 1)`.
/// Kernel sides must be odd so the padding `d * (k - 1) / 2` is symmetric.
#[derive(Clone, Debug)]
pub struct DepthwiseConv<T = f32> {
    pub kernel: Param<T>,
    pub bias: Param<T>,
    pub dilation: usize,
}

/// Valid output range `[lo, hi)` along one axis for a tap at offset `off`.
#[inline]
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

impl<T: Element> DepthwiseConv<T> {
    /// He-initialised kernel (std `sqrt(2 / (kh * kw))`) and zero bias.
    pub fn init(
        channels: usize,
        kh: usize,
        kw: usize,
        dilation: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        check_kernel(kh, kw, dilation)?;
        let std = (2.0 / (kh * kw) as f64).sqrt();
        let kernel = Tensor::rand_normal([channels, 1, kh, kw], rng, 0.0, std)?;
        Self::from_parts(kernel, Tensor::zeros([1, channels, 1, 1])?, dilation)
    }

    pub fn zeros(channels: usize, kh: usize, kw: usize, dilation: usize) -> Result<Self> {
        check_kernel(kh, kw, dilation)?;
        Self::from_parts(
            Tensor::zeros([channels, 1, kh, kw])?,
            Tensor::zeros([1, channels, 1, 1])?,
            dilation,
        )
    }

    pub fn from_parts(kernel: Tensor<T>, bias: Tensor<T>, dilation: usize) -> Result<Self> {
        let kd = kernel.dims();
        check_kernel(kd.h, kd.w, dilation)?;
        if kd.c != 1 {
            return Err(Error::shape(format!("depthwise kernel {kd} must be (C, 1, kh, kw)")));
        }
        bias.expect_dims(Dims::new(1, kd.n, 1, 1)?, "depthwise bias")?;
        Ok(Self {
            kernel: Param::new(kernel),
            bias: Param::new(bias),
            dilation,
        })
    }

    /// Identity kernel: 1 at the centre tap, zero bias.
    pub fn delta(channels: usize, kh: usize, kw: usize, dilation: usize) -> Result<Self> {
        let mut conv = Self::zeros(channels, kh, kw, dilation)?;
        for c in 0..channels {
            conv.kernel.value.set(c, 0, kh / 2, kw / 2, T::one());
        }
        Ok(conv)
    }

    pub fn channels(&self) -> usize {
        self.kernel.value.dims().n
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        let d = self.kernel.value.dims();
        (d.h, d.w)
    }

    pub fn param_count(&self) -> usize {
        let (kh, kw) = self.kernel_size();
        self.channels() * kh * kw + self.channels()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (kh, kw) = self.kernel_size();
        check_kernel(kh, kw, self.dilation)?;
        if x.dims().c != self.channels() {
            return Err(Error::shape(format!(
                "depthwise conv expects {} channels, input is {}",
                self.channels(),
                x.dims()
            )));
        }
        Ok(())
    }

    fn taps(&self) -> impl Iterator<Item = (usize, isize, isize)> + '_ {
        let (kh, kw) = self.kernel_size();
        let d = self.dilation as isize;
        (0..kh).flat_map(move |ky| {
            (0..kw).map(move |kx| {
                (
                    ky * kw + kx,
                    (ky as isize - (kh / 2) as isize) * d,
                    (kx as isize - (kw / 2) as isize) * d,
                )
            })
        })
    }

    /// Each output pixel accumulates its in-bounds taps in row-major kernel
    /// order starting from zero, then adds the bias.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let dims = x.dims();
        let (h, w) = (dims.h, dims.w);
        let (kh, kw) = self.kernel_size();
        let ksize = kh * kw;
        let kernel = self.kernel.value.data();
        let bias = self.bias.value.data();
        let taps: Vec<_> = self.taps().collect();

        let mut out = vec![T::zero(); dims.numel()];
        out.par_chunks_mut(dims.plane())
            .zip(x.data().par_chunks(dims.plane()))
            .enumerate()
            .for_each(|(plane, (op, xp))| {
                let c = plane % dims.c;
                let k = &kernel[c * ksize..(c + 1) * ksize];
                for &(t, dy, dx) in &taps {
                    let (y0, y1) = valid_range(h, dy);
                    let (x0, x1) = valid_range(w, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let src = ((y as isize + dy) as usize) * w;
                        let sx0 = (x0 as isize + dx) as usize;
                        axpy(
                            k[t],
                            &xp[src + sx0..src + sx0 + (x1 - x0)],
                            &mut op[y * w + x0..y * w + x1],
                        );
                    }
                }
                let b = bias[c];
                op.iter_mut().for_each(|v| *v = *v + b);
            });
        Ok(Tensor::from_parts(dims, out))
    }

    /// Accumulates kernel and bias gradients; returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        grad_out.expect_dims(x.dims(), "depthwise conv grad")?;
        let dims = x.dims();
        let (h, w) = (dims.h, dims.w);
        let (kh, kw) = self.kernel_size();
        let ksize = kh * kw;
        let taps: Vec<_> = self.taps().collect();
        let kernel = self.kernel.value.data();

        let mut gx = vec![T::zero(); dims.numel()];
        gx.par_chunks_mut(dims.plane())
            .zip(grad_out.data().par_chunks(dims.plane()))
            .enumerate()
            .for_each(|(plane, (gxp, gp))| {
                let c = plane % dims.c;
                let k = &kernel[c * ksize..(c + 1) * ksize];
                for &(t, dy, dx) in &taps {
                    let (y0, y1) = valid_range(h, dy);
                    let (x0, x1) = valid_range(w, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let dst = ((y as isize + dy) as usize) * w;
                        let dx0 = (x0 as isize + dx) as usize;
                        axpy(
                            k[t],
                            &gp[y * w + x0..y * w + x1],
                            &mut gxp[dst + dx0..dst + dx0 + (x1 - x0)],
                        );
                    }
                }
            });

        let per_channel: Vec<(Vec<T>, T)> = (0..dims.c)
            .into_par_iter()
            .map(|c| {
                let mut gk = vec![T::zero(); ksize];
                let mut gb = T::zero();
                for n in 0..dims.n {
                    let xp = x.plane(n, c);
                    let gp = grad_out.plane(n, c);
                    gb = gb + sum(gp);
                    for &(t, dy, dx) in &taps {
                        let (y0, y1) = valid_range(h, dy);
                        let (x0, x1) = valid_range(w, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let src = ((y as isize + dy) as usize) * w;
                            let sx0 = (x0 as isize + dx) as usize;
                            acc = acc
                                + dot(
                                    &gp[y * w + x0..y * w + x1],
                                    &xp[src + sx0..src + sx0 + (x1 - x0)],
                                );
                        }
                        gk[t] = gk[t] + acc;
                    }
                }
                (gk, gb)
            })
            .collect();

        let kgrad = self.kernel.grad.data_mut();
        let bgrad = self.bias.grad.data_mut();
        for (c, (gk, gb)) in per_channel.into_iter().enumerate() {
            for (t, g) in gk.into_iter().enumerate() {
                kgrad[c * ksize + t] = kgrad[c * ksize + t] + g;
            }
            bgrad[c] = bgrad[c] + gb;
        }
        Ok(Tensor::from_parts(dims, gx))
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.kernel, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.kernel, &mut self.bias]
    }

    pub fn cast<U: Element>(&self) -> DepthwiseConv<U> {
        DepthwiseConv {
            kernel: self.kernel.cast(),
            bias: self.bias.cast(),
            dilation: self.dilation,
        }
    }
}

fn check_kernel(kh: usize, kw: usize, dilation: usize) -> Result<()> {
    for k in [kh, kw] {
        if k % 2 == 0 {
            return Err(Error::UnsupportedKernel(k));
        }
    }
    if dilation == 0 {
        return Err(Error::input("dilation must be at least 1"));
    }
    Ok(())
}

/// 1x1 convolution: a per-pixel linear map across channels.
///
/// Weight is `(C2, C1, 1, 1)`, bias `(1, C2, 1, 1)`.
#[derive(Clone, Debug)]
pub struct PointwiseConv<T = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Element> PointwiseConv<T> {
    /// He-initialised weight (std `sqrt(2 / C1)`) and zero bias.
    pub fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        let std = (2.0 / c_in as f64).sqrt();
        let weight = Tensor::rand_normal([c_out, c_in, 1, 1], rng, 0.0, std)?;
        Self::from_parts(weight, Tensor::zeros([1, c_out, 1, 1])?)
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let wd = weight.dims();
        if wd.h != 1 || wd.w != 1 {
            return Err(Error::shape(format!("pointwise weight {wd} must be (C2, C1, 1, 1)")));
        }
        bias.expect_dims(Dims::new(1, wd.n, 1, 1)?, "pointwise bias")?;
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
        })
    }

    pub fn identity(channels: usize) -> Result<Self> {
        let mut weight = Tensor::zeros([channels, channels, 1, 1])?;
        for c in 0..channels {
            weight.set(c, c, 0, 0, T::one());
        }
        Self::from_parts(weight, Tensor::zeros([1, channels, 1, 1])?)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dims().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dims().n
    }

    pub fn param_count(&self) -> usize {
        self.in_channels() * self.out_channels() + self.out_channels()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.dims().c != self.in_channels() {
            return Err(Error::shape(format!(
                "pointwise conv expects {} channels, input is {}",
                self.in_channels(),
                x.dims()
            )));
        }
        Ok(())
    }

    /// `out[o] = sum_i weight[o, i] * x[i] + bias[o]`, summing `i` in order.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let d = x.dims();
        let (c_in, c_out) = (self.in_channels(), self.out_channels());
        let out_dims = Dims { c: c_out, ..d };
        let weight = self.weight.value.data();
        let bias = self.bias.value.data();

        let mut out = vec![T::zero(); out_dims.numel()];
        out.par_chunks_mut(d.plane())
            .enumerate()
            .for_each(|(plane, op)| {
                let (n, o) = (plane / c_out, plane % c_out);
                for i in 0..c_in {
                    axpy(weight[o * c_in + i], x.plane(n, i), op);
                }
                let b = bias[o];
                op.iter_mut().for_each(|v| *v = *v + b);
            });
        Ok(Tensor::from_parts(out_dims, out))
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let d = x.dims();
        let (c_in, c_out) = (self.in_channels(), self.out_channels());
        grad_out.expect_dims(Dims { c: c_out, ..d }, "pointwise conv grad")?;
        let weight = self.weight.value.data();

        let mut gx = vec![T::zero(); d.numel()];
        gx.par_chunks_mut(d.plane())
            .enumerate()
            .for_each(|(plane, gxp)| {
                let (n, i) = (plane / c_in, plane % c_in);
                for o in 0..c_out {
                    axpy(weight[o * c_in + i], grad_out.plane(n, o), gxp);
                }
            });

        let per_out: Vec<(Vec<T>, T)> = (0..c_out)
            .into_par_iter()
            .map(|o| {
                let mut gw = vec![T::zero(); c_in];
                let mut gb = T::zero();
                for n in 0..d.n {
                    let gp = grad_out.plane(n, o);
                    gb = gb + sum(gp);
                    for (i, g) in gw.iter_mut().enumerate() {
                        *g = *g + dot(gp, x.plane(n, i));
                    }
                }
                (gw, gb)
            })
            .collect();

        let wgrad = self.weight.grad.data_mut();
        let bgrad = self.bias.grad.data_mut();
        for (o, (gw, gb)) in per_out.into_iter().enumerate() {
            for (i, g) in gw.into_iter().enumerate() {
                wgrad[o * c_in + i] = wgrad[o * c_in + i] + g;
            }
            bgrad[o] = bgrad[o] + gb;
        }
        Ok(Tensor::from_parts(d, gx))
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn cast<U: Element>(&self) -> PointwiseConv<U> {
        PointwiseConv {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}
