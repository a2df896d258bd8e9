//! Soft Dice loss, reduced over the whole batch.
//!
//! ```text
//! I = sum g * p,  S = sum (g + p)
//! L = 1 - (2 I + s) / (S + s)
//! dL/dp_i = -(2 g_i (S + s) - (2 I + s)) / (S + s)^2
//! ```

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiceLossConfig {
    pub smooth: f64,
}

impl Default for DiceLossConfig {
    fn default() -> Self {
        Self { smooth: 1e-5 }
    }
}

/// Loss value and its gradient with respect to `pred`. Sums are taken in
/// `f64` whatever the element type.
pub fn dice_loss<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>, cfg: &DiceLossConfig) -> Result<(f64, Tensor<T>)> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(format!("prediction {} vs target {}", pred.dims(), gt.dims())));
    }
    if !(cfg.smooth > 0.0) {
        return Err(Error::input(format!("smooth must be positive, got {}", cfg.smooth)));
    }
    let (mut inter, mut total) = (0.0f64, 0.0f64);
    for (k, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        let g = g.as_f64();
        if g != 0.0 && g != 1.0 {
            return Err(Error::input(format!("target value {g} at {k} is not binary")));
        }
        let p = p.as_f64();
        inter += g * p;
        total += g + p;
    }
    let s = cfg.smooth;
    let num = 2.0 * inter + s;
    let den = total + s;
    let loss = 1.0 - num / den;
    let den2 = den * den;
    let data = gt
        .data()
        .iter()
        .map(|&g| T::lit(-(2.0 * g.as_f64() * den - num) / den2))
        .collect();
    Ok((loss, Tensor::from_vec(pred.shape(), data)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::testutil::{assert_grad_close, numeric_grad};

    #[test]
    fn perfect_and_disjoint() {
        let cfg = DiceLossConfig::default();
        let ones = Tensor::<f32>::full([2, 1, 3, 3], 1.0).unwrap();
        assert_eq!(dice_loss(&ones, &ones, &cfg).unwrap().0, 0.0);
        let zeros = Tensor::<f32>::zeros([2, 1, 3, 3]).unwrap();
        let (l, _) = dice_loss(&zeros, &ones, &cfg).unwrap();
        assert!((l - (1.0 - 1e-5 / (18.0 + 1e-5))).abs() < 1e-12);
    }

    #[test]
    fn half_overlap_is_one_third() {
        let gt = Tensor::<f64>::from_vec([1, 1, 2, 4], vec![1., 1., 1., 1., 0., 0., 0., 0.]).unwrap();
        let pred = Tensor::<f64>::full([1, 1, 2, 4], 1.0).unwrap();
        let (l, _) = dice_loss(&pred, &gt, &DiceLossConfig::default()).unwrap();
        // direct summation: I = 4, S = 12
        let oracle = 1.0 - (2.0 * 4.0 + 1e-5) / (12.0 + 1e-5);
        assert_eq!(l, oracle);
        assert!((l - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let pred = Tensor::<f64>::rand_uniform([1, 1, 4, 4], &mut rng, 0.05, 0.95).unwrap();
        let gt = crate::ops::map_unary(
            &Tensor::<f64>::rand_uniform([1, 1, 4, 4], &mut rng, 0.0, 1.0).unwrap(),
            |v| if v > 0.5 { 1.0 } else { 0.0 },
        );
        let cfg = DiceLossConfig::default();
        let (_, g) = dice_loss(&pred, &gt, &cfg).unwrap();
        let num = numeric_grad(&pred, 1e-6, |p| dice_loss(p, &gt, &cfg).unwrap().0);
        assert_grad_close(&g, &num, 1e-3);
    }

    #[test]
    fn rejects_soft_target() {
        let p = Tensor::<f32>::full([1, 1, 2, 2], 0.5).unwrap();
        assert!(dice_loss(&p, &p, &DiceLossConfig::default()).is_err());
        let bad = DiceLossConfig { smooth: 0.0 };
        let gt = Tensor::<f32>::zeros([1, 1, 2, 2]).unwrap();
        assert!(dice_loss(&p, &gt, &bad).is_err());
    }

    #[test]
    fn decreasing_in_intersection() {
        // S held fixed at 4: swap prediction mass from background to foreground.
        let gt = Tensor::<f64>::from_vec([1, 1, 1, 4], vec![1., 1., 0., 0.]).unwrap();
        let cfg = DiceLossConfig::default();
        let mut last = f64::INFINITY;
        for k in 0..=4 {
            let a = k as f64 / 4.0;
            let p = Tensor::from_vec([1, 1, 1, 4], vec![a, a, 1.0 - a, 1.0 - a]).unwrap();
            let (l, _) = dice_loss(&p, &gt, &cfg).unwrap();
            assert!(l < last && (0.0..1.0).contains(&l));
            last = l;
        }
    }
}
