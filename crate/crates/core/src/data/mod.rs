//! Image/mask pairs: PNG loading, manifests and splits, and a seeded
//! synthetic dataset.

mod manifest;
mod png;
mod synth;

pub use manifest::{assign_splits, list_pngs, make_splits, DatasetManifest, ManifestEntry, Split, SplitRatios, MANIFEST_FILE};
pub use png::{load_image, load_mask, load_pair, save_image_png, save_mask_png};
pub use synth::{synth_dataset, write_dataset, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length every sample is resized to.
pub const IMAGE_SIZE: usize = 256;

/// One training example: an RGB image in `[0, 1]` and a binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub id: String,
    /// `(1, 3, H, W)`
    pub image: Tensor,
    /// `(1, 1, H, W)`, entries in `{0, 1}`
    pub mask: Tensor,
}

impl SamplePair {
    pub fn new(id: impl Into<String>, image: Tensor, mask: Tensor) -> Result<Self> {
        let pair = Self {
            id: id.into(),
            image,
            mask,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        let (i, m) = (self.image.dims(), self.mask.dims());
        if i.n != 1 || i.c != 3 || m.n != 1 || m.c != 1 || (i.h, i.w) != (m.h, m.w) {
            return Err(Error::shape(format!(
                "sample `{}`: image {i} and mask {m} must be (1,3,H,W) and (1,1,H,W)",
                self.id
            )));
        }
        if let Some(k) = self.mask.data().iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::input(format!("sample `{}`: mask value at {k} is not 0 or 1", self.id)));
        }
        if let Some(k) = self.image.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input(format!("sample `{}`: image value at {k} outside [0, 1]", self.id)));
        }
        Ok(())
    }

    pub fn size(&self) -> (usize, usize) {
        let d = self.image.dims();
        (d.h, d.w)
    }
}

/// Stacks samples into an `(N, 3, H, W)` image batch and `(N, 1, H, W)` mask batch.
pub fn collate(samples: &[&SamplePair]) -> Result<(Tensor, Tensor)> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&Tensor> = samples.iter().map(|s| &s.mask).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_soft_mask() {
        let image = Tensor::zeros([1, 3, 4, 4]).unwrap();
        let mask = Tensor::full([1, 1, 4, 4], 0.5).unwrap();
        assert!(SamplePair::new("a", image.clone(), mask).is_err());
        let mask = Tensor::zeros([1, 1, 4, 2]).unwrap();
        assert!(SamplePair::new("a", image, mask).is_err());
    }

    #[test]
    fn collate_stacks() {
        let s = SamplePair::new(
            "a",
            Tensor::zeros([1, 3, 4, 4]).unwrap(),
            Tensor::zeros([1, 1, 4, 4]).unwrap(),
        )
        .unwrap();
        let (x, y) = collate(&[&s, &s, &s]).unwrap();
        assert_eq!(x.shape(), [3, 3, 4, 4]);
        assert_eq!(y.shape(), [3, 1, 4, 4]);
    }
}
