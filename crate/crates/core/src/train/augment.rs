//! Paired geometric augmentation.
//!
//! A [`Transform`] is drawn once per sample and applied identically to the
//! image and its mask. Rotation is about the image centre, counterclockwise
//! for positive angles, with nearest-neighbour sampling and zero fill, so
//! masks stay binary.

use crate::data::SamplePair;
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub rotate: bool,
    pub hflip: bool,
    pub vflip: bool,
    /// Angles are uniform in `[-max_angle, max_angle]` degrees.
    pub max_angle: f64,
    pub flip_p: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate: true,
            hflip: true,
            vflip: true,
            max_angle: 30.0,
            flip_p: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            rotate: false,
            hflip: false,
            vflip: false,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        !(self.rotate || self.hflip || self.vflip)
    }
}

/// Rotation first, then horizontal flip, then vertical flip.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Transform {
    pub angle: Option<f64>,
    pub hflip: bool,
    pub vflip: bool,
}

impl Transform {
    /// Draws angle, horizontal flip and vertical flip in that order; a
    /// disabled step consumes no randomness.
    pub fn sample(cfg: &AugmentConfig, rng: &mut Rng) -> Self {
        let angle = cfg.rotate.then(|| rng.uniform(-cfg.max_angle, cfg.max_angle));
        let hflip = cfg.hflip && rng.bernoulli(cfg.flip_p);
        let vflip = cfg.vflip && rng.bernoulli(cfg.flip_p);
        Self { angle, hflip, vflip }
    }

    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        let mut out = match self.angle {
            Some(a) => rotate(t, a)?,
            None => t.clone(),
        };
        if self.hflip {
            out = hflip(&out)?;
        }
        if self.vflip {
            out = vflip(&out)?;
        }
        Ok(out)
    }
}

fn remap(t: &Tensor, src: impl Fn(usize, usize) -> Option<(usize, usize)>) -> Result<Tensor> {
    let d = t.dims();
    let mut data = vec![0.0f32; d.numel()];
    for p in 0..d.planes() {
        let plane = &t.data()[p * d.plane()..(p + 1) * d.plane()];
        let out = &mut data[p * d.plane()..(p + 1) * d.plane()];
        for y in 0..d.h {
            for x in 0..d.w {
                if let Some((sy, sx)) = src(y, x) {
                    out[y * d.w + x] = plane[sy * d.w + sx];
                }
            }
        }
    }
    Tensor::from_vec(d.to_array(), data)
}

pub fn hflip(t: &Tensor) -> Result<Tensor> {
    let w = t.dims().w;
    remap(t, |y, x| Some((y, w - 1 - x)))
}

pub fn vflip(t: &Tensor) -> Result<Tensor> {
    let h = t.dims().h;
    remap(t, |y, x| Some((h - 1 - y, x)))
}

/// Counterclockwise rotation by `degrees` about `((W-1)/2, (H-1)/2)`.
pub fn rotate(t: &Tensor, degrees: f64) -> Result<Tensor> {
    let d = t.dims();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (d.w as f64 - 1.0) / 2.0;
    let cy = (d.h as f64 - 1.0) / 2.0;
    remap(t, |y, x| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let sx = (cos * dx - sin * dy + cx + 0.5).floor();
        let sy = (sin * dx + cos * dy + cy + 0.5).floor();
        let inside = sx >= 0.0 && sy >= 0.0 && sx < d.w as f64 && sy < d.h as f64;
        inside.then_some((sy as usize, sx as usize))
    })
}

/// Same random transform on image and mask.
pub fn augment(pair: &SamplePair, cfg: &AugmentConfig, rng: &mut Rng) -> Result<SamplePair> {
    if cfg.is_identity() {
        return Ok(pair.clone());
    }
    let tf = Transform::sample(cfg, rng);
    Ok(SamplePair {
        id: pair.id.clone(),
        image: tf.apply(&pair.image)?,
        mask: tf.apply(&pair.mask)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize) -> Tensor {
        Tensor::from_vec([1, 1, h, w], (0..h * w).map(|v| v as f32 + 1.0).collect()).unwrap()
    }

    #[test]
    fn identity_when_disabled() {
        let pair = SamplePair {
            id: "a".into(),
            image: Tensor::rand_uniform([1, 3, 5, 5], &mut Rng::new(0), 0.0, 1.0).unwrap(),
            mask: Tensor::zeros([1, 1, 5, 5]).unwrap(),
        };
        assert_eq!(augment(&pair, &AugmentConfig::none(), &mut Rng::new(1)).unwrap(), pair);
        assert_eq!(rotate(&pair.image, 0.0).unwrap(), pair.image);
    }

    #[test]
    fn flips_are_involutions() {
        let t = grid(3, 4);
        assert_eq!(hflip(&hflip(&t).unwrap()).unwrap(), t);
        assert_eq!(vflip(&vflip(&t).unwrap()).unwrap(), t);
        assert_eq!(hflip(&t).unwrap().plane(0, 0)[..4], [4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn quarter_turn_permutes_two_by_two() {
        // [[a, b], [c, d]] -> [[b, d], [a, c]]
        let t = grid(2, 2);
        assert_eq!(rotate(&t, 90.0).unwrap().data(), [2.0, 4.0, 1.0, 3.0]);
        let back = rotate(&rotate(&t, 90.0).unwrap(), -90.0).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rotation_zero_fills_corners() {
        let t = Tensor::full([1, 1, 9, 9], 1.0).unwrap();
        let r = rotate(&t, 30.0).unwrap();
        assert_eq!(r.get(0, 0, 0, 0), 0.0);
        assert_eq!(r.get(0, 0, 4, 4), 1.0);
    }

    #[test]
    fn transform_draw_order_is_fixed() {
        let cfg = AugmentConfig::default();
        let a = Transform::sample(&cfg, &mut Rng::new(4));
        let b = Transform::sample(&cfg, &mut Rng::new(4));
        assert_eq!(a, b);
        assert!(a.angle.unwrap().abs() <= 30.0);
    }
}
