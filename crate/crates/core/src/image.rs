//! Grayscale images, binary masks, and the dataset plumbing around them.

pub mod manifest;
pub mod netpbm;
pub mod patches;
pub mod resample;
pub mod synthetic;

pub use manifest::{load_manifest, write_manifest, DatasetManifest, ManifestEntry};
pub use netpbm::{load_image, load_mask, save_image, save_mask};
pub use patches::{patch_corners, sample_patches, PatchPair, PATCH_SIZE, SCALE_FACTOR, SMALL_SIZE};
pub use resample::{bicubic_resize, crop_to_multiple, degrade};
pub use synthetic::{
    make_synthetic_dataset, make_synthetic_dataset_with, make_texture_dataset, SyntheticConfig,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Grayscale raster with pixels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    /// Builds an image, clamping every pixel into `[0, 1]`.
    pub fn new(width: usize, height: usize, mut pixels: Vec<f32>) -> Result<GrayImage> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape {
                context: "GrayImage::new",
                expected: format!("{} pixels for {width}x{height}", width * height),
                actual: format!("{} pixels", pixels.len()),
            });
        }
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> GrayImage {
        GrayImage::new(width, height, vec![value; width * height]).unwrap()
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> GrayImage {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage::new(width, height, pixels).unwrap()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<GrayImage> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidParam(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..][..width]);
        }
        GrayImage::new(width, height, pixels)
    }

    /// `[1, 1, H, W]` tensor view of the image.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 1, self.height, self.width], self.pixels.clone()).unwrap()
    }

    /// Stacks same-sized images into an `[N, 1, H, W]` batch.
    pub fn batch_to_tensor(images: &[&GrayImage]) -> Result<Tensor> {
        let (w, h) = (images[0].width, images[0].height);
        let mut data = Vec::with_capacity(images.len() * w * h);
        for img in images {
            if img.width != w || img.height != h {
                return Err(Error::Shape {
                    context: "batch_to_tensor",
                    expected: format!("{w}x{h}"),
                    actual: format!("{}x{}", img.width, img.height),
                });
            }
            data.extend_from_slice(&img.pixels);
        }
        Tensor::new([images.len(), 1, h, w], data)
    }

    /// Reads plane `index` of an `[N, 1, H, W]` tensor back into an image,
    /// clamping to `[0, 1]`.
    pub fn from_tensor_plane(t: &Tensor, index: usize) -> Result<GrayImage> {
        let (n, c, h, w) = t.dims4()?;
        if c != 1 || index >= n {
            return Err(Error::Shape {
                context: "from_tensor_plane",
                expected: format!("[N, 1, H, W] with N > {index}"),
                actual: format!("{:?}", t.shape()),
            });
        }
        GrayImage::new(w, h, t.data()[index * h * w..][..h * w].to_vec())
    }
}

/// Per-pixel 0/1 mask with the same layout as the image it annotates.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<BinaryMask> {
        if bits.len() != width * height {
            return Err(Error::Shape {
                context: "BinaryMask::new",
                expected: format!("{} bits for {width}x{height}", width * height),
                actual: format!("{} bits", bits.len()),
            });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParam("mask bits must be 0 or 1".into()));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: usize, height: usize) -> BinaryMask {
        BinaryMask {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<BinaryMask> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidParam(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds mask {}x{}",
                self.width, self.height
            )));
        }
        let mut bits = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            bits.extend_from_slice(&self.bits[y * self.width + x0..][..width]);
        }
        BinaryMask::new(width, height, bits)
    }

    /// Renders the mask as a black/white image (1 -> white).
    pub fn to_image(&self) -> GrayImage {
        GrayImage::new(
            self.width,
            self.height,
            self.bits.iter().map(|&b| b as f32).collect(),
        )
        .unwrap()
    }

    /// Thresholds an image at > 0.5 into a mask.
    pub fn from_image(img: &GrayImage) -> BinaryMask {
        BinaryMask {
            width: img.width,
            height: img.height,
            bits: img.pixels.iter().map(|&p| (p > 0.5) as u8).collect(),
        }
    }

    /// Per-pixel `[1, 1, H, W]` target tensor (0.0 / 1.0).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [1, 1, self.height, self.width],
            self.bits.iter().map(|&b| b as f32).collect(),
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_image_clamps_on_construction() {
        let img = GrayImage::new(2, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn gray_image_rejects_wrong_pixel_count() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn crop_extracts_region() {
        let img = GrayImage::from_fn(4, 3, |x, y| (y * 4 + x) as f32 / 11.0);
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.get(0, 0), img.get(1, 1));
        assert_eq!(c.get(1, 1), img.get(2, 2));
        assert!(img.crop(3, 0, 2, 1).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let img = GrayImage::from_fn(3, 2, |x, y| (x + y) as f32 / 4.0);
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[1, 1, 2, 3]);
        let back = GrayImage::from_tensor_plane(&t, 0).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn mask_round_trips_through_image() {
        let mut m = BinaryMask::zeros(3, 3);
        m.set(1, 1, true);
        m.set(2, 0, true);
        let img = m.to_image();
        assert_eq!(BinaryMask::from_image(&img), m);
        assert_eq!(m.count_ones(), 2);
    }

    #[test]
    fn mask_rejects_non_binary_bits() {
        assert!(BinaryMask::new(1, 1, vec![2]).is_err());
    }
}
