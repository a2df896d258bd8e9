use rayon::prelude::*;

use crate::element::Element;
use crate::error::Result;
use crate::tensor::Tensor;

const PAR_CHUNK: usize = 4096;

fn par_map<T: Element>(x: &Tensor<T>, f: impl Fn(T) -> T + Sync) -> Tensor<T> {
    let mut out = x.clone();
    out.data_mut()
        .par_chunks_mut(PAR_CHUNK)
        .for_each(|c| c.iter_mut().for_each(|v| *v = f(*v)));
    out
}

fn par_zip<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T + Sync,
) -> Result<Tensor<T>> {
    b.expect_dims(a.dims(), "activation grad")?;
    let mut out = a.clone();
    out.data_mut()
        .par_chunks_mut(PAR_CHUNK)
        .zip(b.data().par_chunks(PAR_CHUNK))
        .for_each(|(oc, bc)| {
            oc.iter_mut().zip(bc).for_each(|(o, &bv)| *o = f(*o, bv));
        });
    Ok(out)
}

#[inline]
fn std_normal_cdf<T: Element>(x: T) -> T {
    T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// `x * Phi(x)` with the exact erf-based normal CDF.
pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    par_map(x, |v| v * std_normal_cdf(v))
}

/// Gradient of [`gelu`] given its input: `Phi(x) + x * phi(x)`.
pub fn gelu_backward<T: Element>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let inv_sqrt_2pi = T::lit(0.5 * std::f64::consts::FRAC_2_SQRT_PI * std::f64::consts::FRAC_1_SQRT_2);
    par_zip(x, grad_out, |v, g| {
        let pdf = (-(v * v) * T::lit(0.5)).exp() * inv_sqrt_2pi;
        g * (std_normal_cdf(v) + v * pdf)
    })
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    par_map(x, |v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// Gradient of [`sigmoid`] given its output `s`: `s * (1 - s)`.
pub fn sigmoid_backward<T: Element>(out: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    par_zip(out, grad_out, |s, g| g * s * (T::one() - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::testutil::{assert_grad_close, numeric_grad, weighted_sum};

    fn scalar<T: Element>(v: f64) -> Tensor<T> {
        Tensor::from_vec([1, 1, 1, 1], vec![T::lit(v)]).unwrap()
    }

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(&scalar::<f32>(0.0)).data()[0], 0.0);
        assert!((gelu(&scalar::<f32>(10.0)).data()[0] - 10.0).abs() < 1e-6);
        assert!(gelu(&scalar::<f32>(-10.0)).data()[0].abs() < 1e-6);
        // Phi(1) = 0.841344746...
        assert!((gelu(&scalar::<f32>(1.0)).data()[0] - 0.841345).abs() < 1e-5);
    }

    #[test]
    fn sigmoid_reference_values() {
        assert_eq!(sigmoid(&scalar::<f32>(0.0)).data()[0], 0.5);
        // 1 / (1 + e^-2) = 0.8807970779...
        assert!((sigmoid(&scalar::<f32>(2.0)).data()[0] - 0.880797).abs() < 1e-5);
        let x = Tensor::<f32>::rand_normal([1, 1, 4, 4], &mut Rng::new(2), 0.0, 5.0).unwrap();
        let pos = sigmoid(&x);
        let neg = sigmoid(&crate::ops::scale(&x, -1.0));
        for (a, b) in pos.data().iter().zip(neg.data()) {
            assert!((a + b - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        let x = Tensor::<f64>::rand_normal([2, 3, 4, 4], &mut rng, 0.0, 2.0).unwrap();
        let w = Tensor::<f64>::rand_normal([2, 3, 4, 4], &mut rng, 0.0, 1.0).unwrap();

        let g = gelu_backward(&x, &w).unwrap();
        assert_grad_close(&g, &numeric_grad(&x, 1e-6, |t| weighted_sum(&gelu(t), &w)), 1e-7);

        let s = sigmoid(&x);
        let g = sigmoid_backward(&s, &w).unwrap();
        assert_grad_close(&g, &numeric_grad(&x, 1e-6, |t| weighted_sum(&sigmoid(t), &w)), 1e-7);
    }
}
