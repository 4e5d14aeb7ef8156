//! Bicubic resampling: the degradation operator and the baseline upscaler.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Catmull-Rom family parameter.
const A: f64 = -0.5;

/// Cubic convolution kernel with a = -0.5. W(0) = 1, W(1) = W(2) = 0.
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-index taps for one axis: clamped source indices and
/// sum-normalized weights. When downscaling, the kernel is stretched by the
/// scale factor so it spans enough source pixels to anti-alias.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let scale = in_len as f64 / out_len as f64;
    let fscale = scale.max(1.0);
    let support = 2.0 * fscale;
    let mut taps = Vec::with_capacity(out_len);
    for dst in 0..out_len {
        let src = (dst as f64 + 0.5) * scale - 0.5;
        let lo = (src - support).floor() as i64 + 1;
        let hi = (src + support).floor() as i64;
        let mut indices = Vec::with_capacity((hi - lo + 1) as usize);
        let mut weights = Vec::with_capacity((hi - lo + 1) as usize);
        let mut sum = 0.0;
        for j in lo..=hi {
            let w = cubic_kernel((j as f64 - src) / fscale);
            sum += w;
            indices.push(j.clamp(0, in_len as i64 - 1) as usize);
            weights.push(w);
        }
        for w in &mut weights {
            *w /= sum;
        }
        taps.push((indices, weights));
    }
    taps
}

/// Resizes with the a = -0.5 cubic kernel, half-pixel center alignment,
/// clamp-replicated edges, and anti-aliased downscaling. Two separable
/// passes in f64; the output is clamped to `[0, 1]`.
pub fn bicubic_resize(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidParam(format!(
            "target dimensions must be positive, got {out_w}x{out_h}"
        )));
    }
    let (in_w, in_h) = (img.width(), img.height());
    let h_taps = axis_taps(in_w, out_w);
    let v_taps = axis_taps(in_h, out_h);

    let mut mid = vec![0.0f64; in_h * out_w];
    for y in 0..in_h {
        let row = &img.pixels()[y * in_w..][..in_w];
        let dst = &mut mid[y * out_w..][..out_w];
        for (d, (indices, weights)) in dst.iter_mut().zip(&h_taps) {
            let mut acc = 0.0;
            for (&j, &w) in indices.iter().zip(weights) {
                acc += w * row[j] as f64;
            }
            *d = acc;
        }
    }

    let mut out = vec![0.0f32; out_w * out_h];
    for (y, (indices, weights)) in v_taps.iter().enumerate() {
        let dst = &mut out[y * out_w..][..out_w];
        for (x, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (&j, &w) in indices.iter().zip(weights) {
                acc += w * mid[j * out_w + x];
            }
            *d = acc as f32;
        }
    }
    GrayImage::new(out_w, out_h, out)
}

/// Largest top-left region with both dimensions divisible by `factor`.
pub fn crop_to_multiple(img: &GrayImage, factor: usize) -> Result<GrayImage> {
    if factor == 0 {
        return Err(Error::InvalidParam("factor must be positive".into()));
    }
    let w = img.width() - img.width() % factor;
    let h = img.height() - img.height() % factor;
    if w == 0 || h == 0 {
        return Err(Error::InvalidParam(format!(
            "image {}x{} is smaller than factor {factor}",
            img.width(),
            img.height()
        )));
    }
    if w == img.width() && h == img.height() {
        return Ok(img.clone());
    }
    img.crop(0, 0, w, h)
}

/// Degrades an image by `factor`: `lr_small` is the anti-aliased downscale,
/// `lr_input` is its bicubic upscale back to the (cropped) original size.
pub fn degrade(hr: &GrayImage, factor: usize) -> Result<(GrayImage, GrayImage)> {
    let hr = crop_to_multiple(hr, factor)?;
    let lr_small = bicubic_resize(&hr, hr.width() / factor, hr.height() / factor)?;
    let lr_input = bicubic_resize(&lr_small, hr.width(), hr.height())?;
    Ok((lr_small, lr_input))
}
