//! Random 64x64 training patches and their degraded forms.

use crate::error::{Error, Result};
use crate::image::resample::bicubic_resize;
use crate::image::GrayImage;
use crate::rng::rng_from;
use rand::Rng as _;

pub const PATCH_SIZE: usize = 64;
pub const SCALE_FACTOR: usize = 4;
pub const SMALL_SIZE: usize = PATCH_SIZE / SCALE_FACTOR;

/// A high-resolution patch with its two degraded views: the 16x16 downscale
/// and the bicubic re-upscale back to 64x64.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub hr: GrayImage,
    pub lr_small: GrayImage,
    pub lr_input: GrayImage,
}

impl PatchPair {
    /// Degrades a 64x64 patch into the pair consumed by training.
    pub fn from_hr(hr: GrayImage) -> Result<PatchPair> {
        if hr.width() != PATCH_SIZE || hr.height() != PATCH_SIZE {
            return Err(Error::Shape {
                context: "PatchPair::from_hr",
                expected: format!("{PATCH_SIZE}x{PATCH_SIZE} patch"),
                actual: format!("{}x{}", hr.width(), hr.height()),
            });
        }
        let lr_small = bicubic_resize(&hr, SMALL_SIZE, SMALL_SIZE)?;
        let lr_input = bicubic_resize(&lr_small, PATCH_SIZE, PATCH_SIZE)?;
        Ok(PatchPair {
            hr,
            lr_small,
            lr_input,
        })
    }
}

/// Uniformly random top-left corners for `count` 64x64 patches. Corner
/// order is row then column, fixed so a seed fully determines the sequence.
pub fn patch_corners(
    width: usize,
    height: usize,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if width < PATCH_SIZE || height < PATCH_SIZE {
        return Err(Error::InvalidParam(format!(
            "image {width}x{height} is smaller than the {PATCH_SIZE}x{PATCH_SIZE} patch size"
        )));
    }
    let mut rng = rng_from(rng_seed);
    Ok((0..count)
        .map(|_| {
            let y0 = rng.gen_range(0..=height - PATCH_SIZE);
            let x0 = rng.gen_range(0..=width - PATCH_SIZE);
            (x0, y0)
        })
        .collect())
}

/// Draws `count` uniformly random 64x64 patches and degrades each.
pub fn sample_patches(img: &GrayImage, count: usize, rng_seed: u64) -> Result<Vec<PatchPair>> {
    patch_corners(img.width(), img.height(), count, rng_seed)?
        .into_iter()
        .map(|(x0, y0)| PatchPair::from_hr(img.crop(x0, y0, PATCH_SIZE, PATCH_SIZE)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 64) as f32 / 63.0)
    }

    #[test]
    fn zero_count_gives_empty_list() {
        assert!(sample_patches(&textured(64, 64), 0, 1).unwrap().is_empty());
    }

    #[test]
    fn exact_size_image_has_single_corner() {
        let img = textured(64, 64);
        for p in sample_patches(&img, 3, 9).unwrap() {
            assert_eq!(p.hr, img);
        }
    }

    #[test]
    fn same_seed_reproduces_patches() {
        let img = textured(100, 90);
        let a = sample_patches(&img, 8, 42).unwrap();
        let b = sample_patches(&img, 8, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_patches(&img, 8, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pair_invariants_recompute_bit_exactly(){
        let img = textured(128, 128);
        for p in sample_patches(&img, 5, 7).unwrap() {
            let small = bicubic_resize(&p.hr, SMALL_SIZE, SMALL_SIZE).unwrap();
            let input = bicubic_resize(&small, PATCH_SIZE, PATCH_SIZE).unwrap();
            assert_eq!(p.lr_small, small);
            assert_eq!(p.lr_input, input);
        }
    }

    #[test]
    fn undersized_image_is_rejected() {
        assert!(sample_patches(&textured(63, 64), 1, 0).is_err());
    }
}
