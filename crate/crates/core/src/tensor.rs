//! Rank-4 NCHW tensors.
//!
//! Data is a flat row-major buffer with width innermost, so one `(n, c)`
//! plane is a contiguous `h * w` slice. Every dimension is at least 1.

use std::fmt;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "dims ({n}, {c}, {h}, {w}) contain a zero"
            )));
        }
        Ok(Self { n, c, h, w })
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one `(n, c)` plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn planes(&self) -> usize {
        self.n * self.c
    }

    pub fn to_array(self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Debug for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl TryFrom<[usize; 4]> for Dims {
    type Error = Error;

    fn try_from(d: [usize; 4]) -> Result<Self> {
        Dims::new(d[0], d[1], d[2], d[3])
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: [usize; 4], value: T) -> Result<Self> {
        let dims = Dims::try_from(dims)?;
        Ok(Self {
            data: vec![value; dims.numel()],
            dims,
        })
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let dims = Dims::try_from(dims)?;
        if data.len() != dims.numel() {
            return Err(Error::shape(format!(
                "{} elements do not fill dims {dims}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Gaussian draws in flat order. `std == 0` yields a constant tensor.
    pub fn rand_normal(dims: [usize; 4], rng: &mut Rng, mean: f64, std: f64) -> Result<Self> {
        if !(std >= 0.0) {
            return Err(Error::input(format!("negative std {std}")));
        }
        let dims = Dims::try_from(dims)?;
        let data = (0..dims.numel())
            .map(|_| T::lit(mean + std * rng.normal()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn rand_uniform(dims: [usize; 4], rng: &mut Rng, lo: f64, hi: f64) -> Result<Self> {
        let dims = Dims::try_from(dims)?;
        let data = (0..dims.numel())
            .map(|_| T::lit(rng.uniform(lo, hi)))
            .collect();
        Ok(Self { dims, data })
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims,
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub(crate) fn from_parts(dims: Dims, data: Vec<T>) -> Self {
        debug_assert_eq!(dims.numel(), data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn shape(&self) -> [usize; 4] {
        self.dims.to_array()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.dims.offset(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.dims.offset(n, c, h, w);
        self.data[i] = v;
    }

    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    /// Tensor holding only batch item `n`.
    pub fn item(&self, n: usize) -> Tensor<T> {
        let len = self.dims.c * self.dims.plane();
        Tensor {
            dims: Dims { n: 1, ..self.dims },
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Concatenates along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let d = first.dims;
        let mut data = Vec::with_capacity(d.numel() * items.len());
        let mut n = 0;
        for t in items {
            if (t.dims.c, t.dims.h, t.dims.w) != (d.c, d.h, d.w) {
                return Err(Error::shape(format!(
                    "cannot stack {} with {}",
                    t.dims, d
                )));
            }
            n += t.dims.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            dims: Dims { n, ..d },
            data,
        })
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn ensure_finite(&self, name: &str) -> Result<()> {
        match self.first_non_finite() {
            Some(index) => Err(Error::NonFinite {
                tensor: name.to_string(),
                index,
            }),
            None => Ok(()),
        }
    }

    pub(crate) fn expect_dims(&self, dims: Dims, what: &str) -> Result<()> {
        if self.dims != dims {
            return Err(Error::shape(format!(
                "{what}: expected {dims}, got {}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &Tensor<T>) -> Result<()> {
        other.expect_dims(self.dims, "accumulate")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
        Ok(())
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor<{}>{} [", std::any::type_name::<T>(), self.dims)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_has_requested_dims() {
        let t = Tensor::<f32>::zeros([1, 1, 2, 2]).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::<f32>::zeros([2, 3, 4, 4]).unwrap();
        assert_eq!(t.numel(), 96);
        assert!(t.data().iter().all(|&v| v == 0.0));
        let t = Tensor::<f32>::zeros([1, 1, 1, 1]).unwrap();
        assert_eq!(t.data(), &[0.0]);
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(
            Tensor::<f32>::zeros([1, 0, 2, 2]),
            Err(Error::InvalidShape(_))
        ));
        assert!(Tensor::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn rand_normal_degenerate_and_deterministic() {
        let mut rng = Rng::new(0);
        let t = Tensor::<f32>::rand_normal([1, 2, 3, 3], &mut rng, 1.5, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.5));

        let a = Tensor::<f32>::rand_normal([2, 3, 4, 4], &mut Rng::new(42), 0.0, 1.0).unwrap();
        let b = Tensor::<f32>::rand_normal([2, 3, 4, 4], &mut Rng::new(42), 0.0, 1.0).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn rand_normal_moments() {
        // Standard errors at 1e5 draws: mean 0.0032, std 0.0022.
        let t = Tensor::<f64>::rand_normal([1, 1, 1, 100_000], &mut Rng::new(3), 0.0, 1.0).unwrap();
        let n = t.numel() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn stack_and_item() {
        let a = Tensor::<f32>::full([1, 2, 2, 2], 1.0).unwrap();
        let b = Tensor::<f32>::full([1, 2, 2, 2], 2.0).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), [2, 2, 2, 2]);
        assert_eq!(s.item(1), b);
        let c = Tensor::<f32>::full([1, 3, 2, 2], 2.0).unwrap();
        assert!(Tensor::stack(&[&a, &c]).is_err());
    }

    #[test]
    fn ensure_finite_names_tensor() {
        let mut t = Tensor::<f32>::zeros([1, 1, 1, 3]).unwrap();
        t.data_mut()[2] = f32::NAN;
        match t.ensure_finite("probe") {
            Err(Error::NonFinite { tensor, index }) => {
                assert_eq!(tensor, "probe");
                assert_eq!(index, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
