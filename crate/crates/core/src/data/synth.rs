//! Seeded blob dataset: filled ellipses on a noisy background.

use std::f64::consts::PI;
use std::path::Path;

use super::{save_image_png, save_mask_png, SamplePair};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    /// Semi-axis range as a fraction of `size`.
    pub axis_range: (f64, f64),
    /// Centre coordinate range as a fraction of `size`.
    pub center_range: (f64, f64),
    pub background: f64,
    pub noise_std: f64,
    pub foreground_range: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: super::IMAGE_SIZE,
            min_ellipses: 1,
            max_ellipses: 3,
            axis_range: (0.07, 0.22),
            center_range: (0.25, 0.75),
            background: 0.2,
            noise_std: 0.05,
            foreground_range: (0.6, 0.9),
        }
    }
}

impl SynthConfig {
    pub fn with_size(size: usize) -> Self {
        Self {
            size,
            ..Self::default()
        }
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    level: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

fn sample(id: String, cfg: &SynthConfig, rng: &mut Rng) -> Result<SamplePair> {
    let s = cfg.size as f64;
    let count = rng.int_inclusive(cfg.min_ellipses, cfg.max_ellipses);
    let ellipses: Vec<Ellipse> = (0..count)
        .map(|_| {
            let cx = rng.uniform(cfg.center_range.0, cfg.center_range.1) * s;
            let cy = rng.uniform(cfg.center_range.0, cfg.center_range.1) * s;
            let a = rng.uniform(cfg.axis_range.0, cfg.axis_range.1) * s;
            let b = rng.uniform(cfg.axis_range.0, cfg.axis_range.1) * s;
            let theta = rng.uniform(0.0, PI);
            let level = rng.uniform(cfg.foreground_range.0, cfg.foreground_range.1);
            Ellipse {
                cx,
                cy,
                a,
                b,
                cos: theta.cos(),
                sin: theta.sin(),
                level,
            }
        })
        .collect();

    let n = cfg.size;
    let plane = n * n;
    let mut image = vec![0.0f32; 3 * plane];
    let mut mask = vec![0.0f32; plane];
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            // Later ellipses paint over earlier ones.
            let hit = ellipses
                .iter()
                .rev()
                .find(|e| e.contains(x as f64 + 0.5, y as f64 + 0.5));
            let base = hit.map_or(cfg.background, |e| e.level);
            mask[i] = if hit.is_some() { 1.0 } else { 0.0 };
            for c in 0..3 {
                let v = base + cfg.noise_std * rng.normal();
                image[c * plane + i] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    SamplePair::new(
        id,
        Tensor::from_vec([1, 3, n, n], image)?,
        Tensor::from_vec([1, 1, n, n], mask)?,
    )
}

/// `count` samples fully determined by `seed`. Sample `i` has id
/// `synth_<i>` and its own generator forked from the seed.
pub fn synth_dataset(count: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<SamplePair>> {
    if count == 0 {
        return Err(Error::input("synthetic dataset needs at least one sample"));
    }
    if cfg.size == 0 || cfg.min_ellipses == 0 || cfg.min_ellipses > cfg.max_ellipses {
        return Err(Error::input(format!("invalid synthetic config {cfg:?}")));
    }
    let mut root = Rng::new(seed);
    (0..count)
        .map(|i| sample(format!("synth_{i:04}"), cfg, &mut root.fork()))
        .collect()
}

/// Writes `images/<id>.png` and `masks/<id>.png` under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[SamplePair]) -> Result<()> {
    let dir = dir.as_ref();
    for s in samples {
        save_image_png(dir.join("images").join(format!("{}.png", s.id)), &s.image)?;
        save_mask_png(dir.join("masks").join(format!("{}.png", s.id)), &s.mask)?;
    }
    Ok(())
}
