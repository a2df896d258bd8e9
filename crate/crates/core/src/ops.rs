//! Elementwise tensor arithmetic and the matching backward rules.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn zip_with<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    what: &str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "{what}: {} vs {}",
            a.dims(),
            b.dims()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.dims(), data))
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(a, b, "add", |x, y| x + y)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(a, b, "mul", |x, y| x * y)
}

pub fn scale<T: Element>(a: &Tensor<T>, s: T) -> Tensor<T> {
    map_unary(a, |x| x * s)
}

pub fn map_unary<T: Element>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_parts(a.dims(), a.data().iter().map(|&x| f(x)).collect())
}

/// Gradients of `add`: the output gradient flows unchanged to both inputs.
pub fn add_backward<T: Element>(grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (grad_out.clone(), grad_out.clone())
}

/// Gradients of `mul` with respect to `a` and `b`.
pub fn mul_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((mul(grad_out, b)?, mul(grad_out, a)?))
}

pub fn scale_backward<T: Element>(grad_out: &Tensor<T>, s: T) -> Tensor<T> {
    scale(grad_out, s)
}

/// Gradient of `map_unary(x, f)` given the derivative `df` of `f`.
pub fn map_unary_backward<T: Element>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    df: impl Fn(T) -> T,
) -> Result<Tensor<T>> {
    zip_with(x, grad_out, "map_unary_backward", |v, g| g * df(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::testutil::{assert_grad_close, numeric_grad};

    fn rand(dims: [usize; 4], seed: u64) -> Tensor<f32> {
        Tensor::rand_normal(dims, &mut Rng::new(seed), 0.0, 1.0).unwrap()
    }

    #[test]
    fn add_zero_is_identity() {
        let x = rand([2, 3, 4, 4], 1);
        let z = Tensor::zeros([2, 3, 4, 4]).unwrap();
        assert_eq!(add(&x, &z).unwrap(), x);
    }

    #[test]
    fn scale_round_trip() {
        let x = rand([1, 2, 3, 3], 2);
        let back = scale(&scale(&x, 2.0), 0.5);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= f32::EPSILON * b.abs());
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = rand([1, 2, 3, 3], 1);
        let b = rand([1, 3, 3, 3], 1);
        assert!(matches!(add(&a, &b), Err(Error::InvalidShape(_))));
        assert!(mul(&a, &b).is_err());
    }

    #[test]
    fn mul_grad_matches_finite_differences() {
        let a = rand([1, 2, 3, 3], 5);
        let b = rand([1, 2, 3, 3], 6);
        let w = rand([1, 2, 3, 3], 7);
        let (ga, _) = mul_backward(&a, &b, &w).unwrap();
        // Under the weighted-sum loss, d/da is w * b.
        let num = numeric_grad(&a, 1e-3, |t| {
            mul(&mul(t, &b).unwrap(), &w).unwrap().sum()
        });
        assert_grad_close(&ga, &num, 1e-3);
    }

    #[test]
    fn map_unary_backward_uses_derivative() {
        let x = rand([1, 1, 2, 5], 8);
        let g = Tensor::full([1, 1, 2, 5], 1.0).unwrap();
        let gx = map_unary_backward(&x, &g, |v| 2.0 * v).unwrap();
        let num = numeric_grad(&x, 1e-3, |t| map_unary(t, |v| v * v).sum());
        assert_grad_close(&gx, &num, 1e-2);
    }
}
