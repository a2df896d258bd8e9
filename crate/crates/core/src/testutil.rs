//! Finite-difference oracle shared by the unit tests.

use crate::element::Element;
use crate::tensor::Tensor;

/// Central differences of a scalar loss with respect to every element of `x`.
pub fn numeric_grad<T: Element>(
    x: &Tensor<T>,
    h: f64,
    loss: impl Fn(&Tensor<T>) -> f64,
) -> Tensor<T> {
    let mut out = x.zeros_like();
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::lit(orig.as_f64() + h);
        let up = loss(&probe);
        probe.data_mut()[i] = T::lit(orig.as_f64() - h);
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = T::lit((up - down) / (2.0 * h));
    }
    out
}

/// Relative error with a unit floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[track_caller]
pub fn assert_grad_close<T: Element>(analytic: &Tensor<T>, numeric: &Tensor<T>, tol: f64) {
    assert_eq!(analytic.dims(), numeric.dims());
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let e = rel_err(a.as_f64(), n.as_f64());
        assert!(e < tol, "element {i}: analytic {a} vs numeric {n} (rel err {e:e})");
    }
}

/// Weighted-sum loss `sum(w * y)`; the weights make every output element
/// contribute distinctly, which a plain sum does not do through batch norm.
pub fn weighted_sum<T: Element>(y: &Tensor<T>, w: &Tensor<T>) -> f64 {
    y.data()
        .iter()
        .zip(w.data())
        .map(|(a, b)| a.as_f64() * b.as_f64())
        .sum()
}
