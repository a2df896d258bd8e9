use std::io::Cursor;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use super::SamplePair;
use crate::atomic::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mask pixels at or above this 8-bit level are foreground.
const MASK_THRESHOLD: u8 = 128;

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(path, std::io::ErrorKind::NotFound.into()));
    }
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.into(),
            message: e.to_string(),
        })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Image {
            path: path.into(),
            message: "image has zero size".into(),
        });
    }
    Ok(img)
}

/// RGB image scaled to `[0, 1]` and bilinearly resized to `size x size`.
/// Grayscale inputs are replicated across the three channels.
pub fn load_image(path: impl AsRef<Path>, size: usize) -> Result<Tensor> {
    let mut rgb = open(path.as_ref())?.to_rgb8();
    let s = size as u32;
    if rgb.dimensions() != (s, s) {
        rgb = imageops::resize(&rgb, s, s, FilterType::Triangle);
    }
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor::from_vec([1, 3, size, size], data)
}

/// Binary mask: nearest-neighbour resize, then `>= 128` is foreground.
pub fn load_mask(path: impl AsRef<Path>, size: usize) -> Result<Tensor> {
    let mut luma = open(path.as_ref())?.to_luma8();
    let s = size as u32;
    if luma.dimensions() != (s, s) {
        luma = imageops::resize(&luma, s, s, FilterType::Nearest);
    }
    let data = luma
        .pixels()
        .map(|p| if p[0] >= MASK_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_vec([1, 1, size, size], data)
}

pub fn load_pair(
    id: impl Into<String>,
    image_path: impl AsRef<Path>,
    mask_path: impl AsRef<Path>,
    size: usize,
) -> Result<SamplePair> {
    SamplePair::new(id, load_image(image_path, size)?, load_mask(mask_path, size)?)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(img: DynamicImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.into(),
            message: e.to_string(),
        })?;
    write_atomic(path, &bytes)
}

/// Writes item 0 of a `(N, 3, H, W)` tensor as an 8-bit RGB PNG.
pub fn save_image_png(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let d = image.dims();
    if d.c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {d}")));
    }
    let mut rgb = RgbImage::new(d.w as u32, d.h as u32);
    let planes: Vec<&[f32]> = (0..3).map(|c| image.plane(0, c)).collect();
    for (i, px) in rgb.pixels_mut().enumerate() {
        *px = image::Rgb([to_u8(planes[0][i]), to_u8(planes[1][i]), to_u8(planes[2][i])]);
    }
    encode(DynamicImage::ImageRgb8(rgb), path.as_ref())
}

/// Writes item 0 of a `(N, 1, H, W)` tensor as an 8-bit PNG: `>= 0.5` is 255.
pub fn save_mask_png(path: impl AsRef<Path>, mask: &Tensor) -> Result<()> {
    let d = mask.dims();
    if d.c != 1 {
        return Err(Error::shape(format!("expected 1 channel, got {d}")));
    }
    let data = mask.plane(0, 0).iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect();
    let gray = GrayImage::from_raw(d.w as u32, d.h as u32, data).expect("buffer sized from dims");
    encode(DynamicImage::ImageLuma8(gray), path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_gray(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
        GrayImage::from_fn(w, h, |x, y| image::Luma([f(x, y)])).save(path).unwrap();
    }

    #[test]
    fn same_size_is_exact_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        RgbImage::from_fn(8, 8, |x, y| image::Rgb([(x * 30) as u8, (y * 30) as u8, 7]))
            .save(&p)
            .unwrap();
        let t = load_image(&p, 8).unwrap();
        assert_eq!(t.get(0, 0, 2, 5), 150.0 / 255.0);
        assert_eq!(t.get(0, 1, 2, 5), 60.0 / 255.0);
        assert_eq!(t.get(0, 2, 7, 7), 7.0 / 255.0);
    }

    #[test]
    fn uniform_gray_survives_resize() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gray.png");
        write_gray(&p, 40, 24, |_, _| 128);
        let t = load_image(&p, 16).unwrap();
        assert_eq!(t.shape(), [1, 3, 16, 16]);
        assert!(t.data().iter().all(|&v| v == 128.0 / 255.0));
    }

    #[test]
    fn checkerboard_mask_stays_binary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.png");
        write_gray(&p, 64, 64, |x, y| if (x + y) % 2 == 0 { 255 } else { 0 });
        let m = load_mask(&p, 32).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        write_gray(&p, 4, 4, |x, _| [0, 127, 128, 255][x as usize]);
        assert_eq!(load_mask(&p, 4).unwrap().plane(0, 0)[..4], [0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn errors_are_descriptive() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        let err = load_image(&missing, 8).unwrap_err().to_string();
        assert!(err.contains("nope.png"), "{err}");
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not a png").unwrap();
        assert!(load_mask(&junk, 8).is_err());
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mut m = Tensor::zeros([1, 1, 4, 4]).unwrap();
        m.set(0, 0, 1, 2, 1.0);
        save_mask_png(&p, &m).unwrap();
        assert_eq!(load_mask(&p, 4).unwrap(), m);
        let img = Tensor::full([1, 3, 4, 4], 0.2).unwrap();
        save_image_png(&p, &img).unwrap();
        assert_eq!(load_image(&p, 4).unwrap().get(0, 0, 0, 0), 51.0 / 255.0);
    }
}
