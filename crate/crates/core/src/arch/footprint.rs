//! Empirical receptive fields.
//!
//! The footprint of a layer is the set of input pixels with a nonzero
//! gradient when the loss is the layer's output at the centre pixel of
//! channel 0. Batch norm runs in evaluation mode so batch statistics do not
//! couple distant pixels.

use std::fmt;

use super::bottleneck::AxialPair;
use super::config::DwVariant;
use super::module::AxialDwModule;
use crate::error::Result;
use crate::nn::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Footprint {
    size: usize,
    cells: Vec<bool>,
}

impl Footprint {
    fn from_grad(g: &Tensor<f64>) -> Self {
        let d = g.dims();
        let mut cells = vec![false; d.plane()];
        for c in 0..d.c {
            for (cell, v) in cells.iter_mut().zip(g.plane(0, c)) {
                *cell |= *v != 0.0;
            }
        }
        Self { size: d.h, cells }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn center(&self) -> usize {
        self.size / 2
    }

    /// Whether the pixel at offset `(dy, dx)` from the centre is in the field.
    pub fn contains(&self, dy: isize, dx: isize) -> bool {
        let c = self.center() as isize;
        let (y, x) = (c + dy, c + dx);
        let s = self.size as isize;
        (0..s).contains(&y) && (0..s).contains(&x) && self.cells[(y * s + x) as usize]
    }

    /// Offsets `(dy, dx)` of every pixel in the field, row-major.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let c = self.center() as isize;
        let s = self.size as isize;
        (0..self.cells.len())
            .filter(|&i| self.cells[i])
            .map(|i| (i as isize / s - c, i as isize % s - c))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Exactly the plus shape with arms of length `arm`.
    pub fn is_cross(&self, arm: isize) -> bool {
        self.matches(|dy, dx| (dy == 0 && dx.abs() <= arm) || (dx == 0 && dy.abs() <= arm))
    }

    /// Exactly the filled square `[-half, half]^2`.
    pub fn is_square(&self, half: isize) -> bool {
        self.matches(|dy, dx| dy.abs() <= half && dx.abs() <= half)
    }

    fn matches(&self, shape: impl Fn(isize, isize) -> bool) -> bool {
        let c = self.center() as isize;
        (0..self.size as isize).all(|y| {
            (0..self.size as isize).all(|x| self.contains(y - c, x - c) == shape(y - c, x - c))
        })
    }
}

impl fmt::Display for Footprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.cells.chunks(self.size) {
            let line: String = row.iter().map(|&c| if c { '#' } else { '.' }).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

fn center_grad(dims: [usize; 4]) -> Result<Tensor<f64>> {
    let mut g = Tensor::zeros(dims)?;
    g.set(0, 0, dims[2] / 2, dims[3] / 2, 1.0);
    Ok(g)
}

/// Footprint of one randomly initialised encoder/decoder module with
/// kernel length `n`, measured on a `(n + 4)`-sided grid.
pub fn module_footprint(variant: DwVariant, n: usize, channels: usize, seed: u64) -> Result<Footprint> {
    let mut rng = Rng::new(seed);
    let mut module = AxialDwModule::<f64>::init(variant, channels, channels, n, &mut rng)?;
    let size = n + 4;
    let x = Tensor::rand_normal([1, channels, size, size], &mut rng, 0.0, 1.0)?;
    let (y, cache) = module.forward(&x, Mode::Eval)?;
    let gx = module.backward(&cache, &center_grad(y.shape())?)?;
    Ok(Footprint::from_grad(&gx))
}

/// Footprint of one dilated `1 x k` + `k x 1` pair without the residual.
pub fn pair_footprint(k: usize, dilation: usize, seed: u64) -> Result<Footprint> {
    let mut rng = Rng::new(seed);
    let mut pair = AxialPair::<f64>::init(1, k, dilation, &mut rng)?;
    let size = dilation * (k - 1) + 5;
    let x = Tensor::rand_normal([1, 1, size, size], &mut rng, 0.0, 1.0)?;
    let gx = pair.backward(&x, &center_grad([1, 1, size, size])?)?;
    Ok(Footprint::from_grad(&gx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axial_is_a_cross() {
        for n in [3, 5, 7] {
            let fp = module_footprint(DwVariant::Axial, n, 3, 1).unwrap();
            assert!(fp.is_cross((n / 2) as isize), "n={n}\n{fp}");
        }
    }

    #[test]
    fn square_is_filled() {
        let fp = module_footprint(DwVariant::Square, 3, 2, 1).unwrap();
        assert!(fp.is_square(1), "{fp}");
        assert_eq!(fp.count(), 9);
    }

    #[test]
    fn pointwise_only_is_a_single_cell() {
        let fp = module_footprint(DwVariant::Axial, 1, 2, 1).unwrap();
        assert_eq!(fp.offsets(), vec![(0, 0)]);
    }

    #[test]
    fn dilated_pair_taps() {
        let fp = pair_footprint(3, 3, 2).unwrap();
        assert_eq!(
            fp.offsets(),
            vec![(-3, 0), (0, -3), (0, 0), (0, 3), (3, 0)]
        );
    }

    #[test]
    fn renders_grid() {
        let fp = module_footprint(DwVariant::Axial, 3, 1, 4).unwrap();
        let text = fp.to_string();
        assert_eq!(text.lines().count(), 7);
        assert_eq!(text.lines().nth(3).unwrap(), "..###..");
    }
}
