//! Seeded synthetic datasets: root-like strokes on dark backgrounds (with
//! exact ground-truth masks) and smooth sinusoid textures for pretraining.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{io_err, Error, Result};
use crate::image::manifest::{load_manifest, DatasetManifest};
use crate::image::netpbm::{save_image, save_mask};
use crate::image::{BinaryMask, GrayImage};
use crate::rng::{derive_seed, rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub strokes_min: usize,
    pub strokes_max: usize,
    pub stroke_width_min: f64,
    pub stroke_width_max: f64,
    pub brightness_min: f32,
    pub brightness_max: f32,
    pub background_min: f32,
    pub background_max: f32,
    pub blur_sigma_max: f64,
    pub noise_sigma: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            strokes_min: 3,
            strokes_max: 10,
            stroke_width_min: 1.0,
            stroke_width_max: 5.0,
            brightness_min: 0.7,
            brightness_max: 1.0,
            background_min: 0.05,
            background_max: 0.15,
            blur_sigma_max: 1.5,
            noise_sigma: 0.02,
        }
    }
}

impl SyntheticConfig {
    /// Strokes only: no blur and no noise, so the mask equals thresholding
    /// the rendered image.
    pub fn clean() -> Self {
        SyntheticConfig {
            blur_sigma_max: 0.0,
            noise_sigma: 0.0,
            ..Default::default()
        }
    }
}

/// Separable Gaussian blur with clamp-replicated edges; `sigma <= 0` is the
/// identity.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut weights = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for j in -radius..=radius {
        let w = (-(j as f64).powi(2) / (2.0 * sigma * sigma)).exp();
        weights.push(w);
        sum += w;
    }
    for w in &mut weights {
        *w /= sum;
    }

    let (w, h) = (img.width(), img.height());
    let mut mid = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &img.pixels()[y * w..][..w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in weights.iter().enumerate() {
                let sx = (x as i64 + k as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += wt * row[sx] as f64;
            }
            mid[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in weights.iter().enumerate() {
                let sy = (y as i64 + k as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += wt * mid[sy * w + x];
            }
            out[y * w + x] = acc as f32;
        }
    }
    GrayImage::new(w, h, out).unwrap()
}

fn bezier(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64), t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    (
        u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0,
        u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1,
    )
}

/// Stamps a filled disk into the raster and the mask.
fn stamp(
    pixels: &mut [f32],
    mask: &mut BinaryMask,
    w: usize,
    h: usize,
    cx: f64,
    cy: f64,
    radius: f64,
    brightness: f32,
) {
    let x_lo = ((cx - radius - 0.5).floor().max(0.0)) as usize;
    let y_lo = ((cy - radius - 0.5).floor().max(0.0)) as usize;
    let x_hi = ((cx + radius + 0.5).ceil().min(w as f64 - 1.0)).max(0.0) as usize;
    let y_hi = ((cy + radius + 0.5).ceil().min(h as f64 - 1.0)).max(0.0) as usize;
    let r2 = radius * radius;
    for y in y_lo..=y_hi.min(h - 1) {
        for x in x_lo..=x_hi.min(w - 1) {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r2 {
                let p = &mut pixels[y * w + x];
                if brightness > *p {
                    *p = brightness;
                }
                mask.set(x, y, true);
            }
        }
    }
}

/// Renders one root-like image: bright quadratic Bezier strokes on a dark
/// background, then optional blur and noise. The mask marks exactly the
/// stroked pixels, before blur and noise.
pub fn synth_root_image(
    width: usize,
    height: usize,
    seed: u64,
    cfg: &SyntheticConfig,
) -> (GrayImage, BinaryMask) {
    let mut rng: Rng = rng_from(seed);
    let background = rng.gen_range(cfg.background_min..cfg.background_max);
    let mut pixels = vec![background; width * height];
    let mut mask = BinaryMask::zeros(width, height);

    let n_strokes = rng.gen_range(cfg.strokes_min..=cfg.strokes_max);
    for _ in 0..n_strokes {
        let pt = |rng: &mut Rng| (rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64));
        let p0 = pt(&mut rng);
        let p1 = pt(&mut rng);
        let p2 = pt(&mut rng);
        let stroke_width = rng.gen_range(cfg.stroke_width_min..=cfg.stroke_width_max);
        let brightness = rng.gen_range(cfg.brightness_min..=cfg.brightness_max);

        let mut length = 0.0;
        let mut prev = p0;
        for i in 1..=16 {
            let q = bezier(p0, p1, p2, i as f64 / 16.0);
            length += ((q.0 - prev.0).powi(2) + (q.1 - prev.1).powi(2)).sqrt();
            prev = q;
        }
        let steps = ((length / 0.2).ceil() as usize).max(2);
        for i in 0..=steps {
            let (cx, cy) = bezier(p0, p1, p2, i as f64 / steps as f64);
            stamp(
                &mut pixels,
                &mut mask,
                width,
                height,
                cx,
                cy,
                stroke_width / 2.0,
                brightness,
            );
        }
    }

    let mut img = GrayImage::new(width, height, pixels).unwrap();
    let blur_sigma = if cfg.blur_sigma_max > 0.0 {
        rng.gen_range(0.0..=cfg.blur_sigma_max)
    } else {
        0.0
    };
    img = gaussian_blur(&img, blur_sigma);
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("positive sigma");
        let noisy: Vec<f32> = img
            .pixels()
            .iter()
            .map(|&p| (p as f64 + normal.sample(&mut rng)) as f32)
            .collect();
        img = GrayImage::new(width, height, noisy).unwrap();
    }
    (img, mask)
}

/// Renders a smooth texture: a mixture of random sinusoid gratings around
/// mid-gray. No mask; used as the non-root pretraining corpus.
pub fn synth_texture_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng: Rng = rng_from(seed);
    let n_waves = rng.gen_range(3..=6);
    let waves: Vec<(f64, f64, f64, f64)> = (0..n_waves)
        .map(|_| {
            (
                rng.gen_range(0.05..0.15),  // amplitude
                rng.gen_range(0.01..0.12),  // x frequency, cycles per pixel
                rng.gen_range(0.01..0.12),  // y frequency
                rng.gen_range(0.0..TAU),    // phase
            )
        })
        .collect();
    GrayImage::from_fn(width, height, |x, y| {
        let mut v = 0.5;
        for &(a, fx, fy, phase) in &waves {
            v += a * (TAU * (fx * x as f64 + fy * y as f64) + phase).sin();
        }
        v as f32
    })
}

fn check_dims(width: usize, height: usize, n_images: usize) -> Result<()> {
    if width < 64 || height < 64 {
        return Err(Error::InvalidParam(format!(
            "synthetic images must be at least 64x64 (the training patch size), got {width}x{height}"
        )));
    }
    if n_images == 0 {
        return Err(Error::InvalidParam("need at least one image".into()));
    }
    Ok(())
}

fn finish_manifest(
    out_dir: &Path,
    dataset_name: &str,
    lines: Vec<String>,
) -> Result<DatasetManifest> {
    let manifest_path = out_dir.join("manifest.tsv");
    let mut text = format!("dataset 0 {dataset_name}\n");
    for line in lines {
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    load_manifest(&manifest_path)
}

/// Writes `n_images` root-like PGMs with exact ground-truth masks and a
/// manifest, all derived from `seed`.
pub fn make_synthetic_dataset(
    n_images: usize,
    width: usize,
    height: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    make_synthetic_dataset_with(&SyntheticConfig::default(), n_images, width, height, seed, out_dir)
}

/// [`make_synthetic_dataset`] with explicit rendering parameters.
pub fn make_synthetic_dataset_with(
    cfg: &SyntheticConfig,
    n_images: usize,
    width: usize,
    height: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    check_dims(width, height, n_images)?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut lines = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let (img, mask) = synth_root_image(width, height, derive_seed(seed, "root-image", i as u64), cfg);
        let img_name = format!("img_{i:04}.pgm");
        let mask_name = format!("mask_{i:04}.pgm");
        save_image(&img, out_dir.join(&img_name))?;
        save_mask(&mask, out_dir.join(&mask_name))?;
        lines.push(format!("0\t{img_name}\t{mask_name}"));
    }
    finish_manifest(out_dir, "synthetic-roots", lines)
}

/// Writes `n_images` sinusoid-texture PGMs (no masks) and a manifest.
pub fn make_texture_dataset(
    n_images: usize,
    width: usize,
    height: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    check_dims(width, height, n_images)?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut lines = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let img = synth_texture_image(width, height, derive_seed(seed, "texture-image", i as u64));
        let img_name = format!("tex_{i:04}.pgm");
        save_image(&img, out_dir.join(&img_name))?;
        lines.push(format!("0\t{img_name}"));
    }
    finish_manifest(out_dir, "synthetic-textures", lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_renders_identical_images() {
        let cfg = SyntheticConfig::default();
        let (a, ma) = synth_root_image(96, 96, 123, &cfg);
        let (b, mb) = synth_root_image(96, 96, 123, &cfg);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let (c, _) = synth_root_image(96, 96, 124, &cfg);
        assert_ne!(a, c);
    }

    #[test]
    fn mask_fraction_is_positive_and_below_half() {
        let cfg = SyntheticConfig::default();
        for seed in 0..40 {
            let (_, mask) = synth_root_image(128, 128, seed, &cfg);
            let frac = mask.count_ones() as f64 / (128.0 * 128.0);
            assert!(frac > 0.0, "seed {seed}: empty mask");
            assert!(frac < 0.5, "seed {seed}: mask covers {frac}");
        }
    }

    #[test]
    fn clean_render_mask_equals_thresholded_image() {
        let cfg = SyntheticConfig::clean();
        for seed in 0..10 {
            let (img, mask) = synth_root_image(96, 96, seed, &cfg);
            // Background tops out at 0.15 and strokes start at 0.7.
            for (p, &bit) in img.pixels().iter().zip(mask.bits()) {
                assert_eq!((*p > 0.4) as u8, bit);
            }
        }
    }

    #[test]
    fn blur_preserves_mean_and_spreads_mass() {
        let mut img = GrayImage::constant(32, 32, 0.0);
        let mid = {
            let mut px = img.pixels().to_vec();
            px[16 * 32 + 16] = 1.0;
            GrayImage::new(32, 32, px).unwrap()
        };
        img = gaussian_blur(&mid, 1.0);
        let sum: f64 = img.pixels().iter().map(|&p| p as f64).sum();
        assert!((sum - 1.0).abs() < 1e-4, "mass {sum}");
        assert!(img.get(16, 16) < 1.0);
        assert!(img.get(15, 16) > 0.0);
        assert_eq!(gaussian_blur(&mid, 0.0), mid);
    }

    #[test]
    fn texture_images_are_mid_gray_and_textured() {
        let img = synth_texture_image(96, 96, 5);
        let mean: f64 =
            img.pixels().iter().map(|&p| p as f64).sum::<f64>() / img.pixels().len() as f64;
        assert!((mean - 0.5).abs() < 0.15, "mean {mean}");
        let var: f64 = img
            .pixels()
            .iter()
            .map(|&p| (p as f64 - mean).powi(2))
            .sum::<f64>()
            / img.pixels().len() as f64;
        assert!(var > 1e-3, "variance {var}");
    }

    #[test]
    fn dataset_writes_images_masks_and_manifest() {
        let dir = std::env::temp_dir().join("rootsr-synth-tests/basic");
        let _ = std::fs::remove_dir_all(&dir);
        let m = make_synthetic_dataset(3, 64, 64, 11, &dir).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.entries.iter().all(|e| e.mask_path.is_some()));
        assert_eq!(m.dataset_names[&0], "synthetic-roots");

        let m2 = make_synthetic_dataset(3, 64, 64, 11, &dir).unwrap();
        assert_eq!(m, m2);
        let bytes_a = std::fs::read(&m.entries[0].image_path).unwrap();
        make_synthetic_dataset(3, 64, 64, 11, &dir).unwrap();
        assert_eq!(std::fs::read(&m.entries[0].image_path).unwrap(), bytes_a);
    }

    #[test]
    fn dataset_rejects_undersized_or_empty_requests() {
        let dir = std::env::temp_dir().join("rootsr-synth-tests/reject");
        assert!(make_synthetic_dataset(1, 32, 64, 0, &dir).is_err());
        assert!(make_synthetic_dataset(0, 64, 64, 0, &dir).is_err());
    }
}
