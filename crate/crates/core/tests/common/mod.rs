//! Reference implementations used to cross-check the optimized kernels.
//!
//! Everything here is written as the plainest possible nested loops over the
//! mathematical definitions, with f64 arithmetic throughout, and shares no
//! code with the library's gather/scatter implementations.

#![allow(dead_code)]

use rootsr::rng::Rng;
use rootsr::tensor::Tensor;
use rand::Rng as _;

pub fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

fn at4(t: &Tensor, i: usize, j: usize, k: usize, l: usize) -> f64 {
    let s = t.shape();
    t.data()[((i * s[1] + j) * s[2] + k) * s[3] + l] as f64
}

/// Definitional convolution: for every output element, walk the kernel and
/// read the padded input, treating out-of-range taps as zero.
pub fn conv2d_oracle(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Tensor {
    let [n, c_in, h, w] = input.shape()[..] else { panic!() };
    let [c_out, _, kh, kw] = weights.shape()[..] else { panic!() };
    let h_out = (h + 2 * padding - kh) / stride + 1;
    let w_out = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0f32; n * c_out * h_out * w_out];
    for ni in 0..n {
        for co in 0..c_out {
            for ho in 0..h_out {
                for wo in 0..w_out {
                    let mut acc = bias.data()[co] as f64;
                    for ci in 0..c_in {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (ho * stride + ki) as isize - padding as isize;
                                let iw = (wo * stride + kj) as isize - padding as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                acc += at4(input, ni, ci, ih as usize, iw as usize)
                                    * at4(weights, co, ci, ki, kj);
                            }
                        }
                    }
                    out[((ni * c_out + co) * h_out + ho) * w_out + wo] = acc as f32;
                }
            }
        }
    }
    Tensor::new([n, c_out, h_out, w_out], out).unwrap()
}

/// Definitional transposed convolution: every input element scatters a copy
/// of the kernel into the output at `i*stride - padding + k`.
pub fn deconv2d_oracle(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Tensor {
    let [n, c_in, h, w] = input.shape()[..] else { panic!() };
    let [_, c_out, kh, kw] = weights.shape()[..] else { panic!() };
    let h_out = (h - 1) * stride + kh + output_padding - 2 * padding;
    let w_out = (w - 1) * stride + kw + output_padding - 2 * padding;
    let mut acc = vec![0.0f64; n * c_out * h_out * w_out];
    for ni in 0..n {
        for co in 0..c_out {
            for slot in &mut acc[(ni * c_out + co) * h_out * w_out..][..h_out * w_out] {
                *slot = bias.data()[co] as f64;
            }
            for ci in 0..c_in {
                for ih in 0..h {
                    for iw in 0..w {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let oh = (ih * stride + ki) as isize - padding as isize;
                                let ow = (iw * stride + kj) as isize - padding as isize;
                                if oh < 0 || ow < 0 || oh >= h_out as isize || ow >= w_out as isize
                                {
                                    continue;
                                }
                                acc[((ni * c_out + co) * h_out + oh as usize) * w_out
                                    + ow as usize] += at4(input, ni, ci, ih, iw)
                                    * at4(weights, ci, co, ki, kj);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(
        [n, c_out, h_out, w_out],
        acc.iter().map(|&v| v as f32).collect(),
    )
    .unwrap()
}

/// Definitional matrix product for the fully connected layer.
pub fn linear_oracle(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Tensor {
    let [n, f] = input.shape()[..] else { panic!() };
    let [_, o] = weights.shape()[..] else { panic!() };
    let mut out = vec![0.0f32; n * o];
    for ni in 0..n {
        for oi in 0..o {
            let mut acc = bias.data()[oi] as f64;
            for fi in 0..f {
                acc += input.data()[ni * f + fi] as f64 * weights.data()[fi * o + oi] as f64;
            }
            out[ni * o + oi] = acc as f32;
        }
    }
    Tensor::new([n, o], out).unwrap()
}

/// Definitional bicubic resize: one flat 2D kernel sum per output pixel,
/// normalized by the total tap weight, no separable passes.
pub fn bicubic_oracle(img: &rootsr::image::GrayImage, out_w: usize, out_h: usize) -> rootsr::image::GrayImage {
    fn kernel(x: f64) -> f64 {
        let a = -0.5;
        let x = x.abs();
        if x < 1.0 {
            ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
        } else if x < 2.0 {
            ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
        } else {
            0.0
        }
    }
    let (in_w, in_h) = (img.width() as f64, img.height() as f64);
    let scale_x = in_w / out_w as f64;
    let scale_y = in_h / out_h as f64;
    let fx = scale_x.max(1.0);
    let fy = scale_y.max(1.0);
    let mut out = vec![0.0f32; out_w * out_h];
    for dy in 0..out_h {
        let src_y = (dy as f64 + 0.5) * scale_y - 0.5;
        for dx in 0..out_w {
            let src_x = (dx as f64 + 0.5) * scale_x - 0.5;
            let mut acc = 0.0;
            let mut norm = 0.0;
            let jy_lo = (src_y - 2.0 * fy).floor() as i64 + 1;
            let jy_hi = (src_y + 2.0 * fy).floor() as i64;
            let jx_lo = (src_x - 2.0 * fx).floor() as i64 + 1;
            let jx_hi = (src_x + 2.0 * fx).floor() as i64;
            for jy in jy_lo..=jy_hi {
                let wy = kernel((jy as f64 - src_y) / fy);
                let py = jy.clamp(0, img.height() as i64 - 1) as usize;
                for jx in jx_lo..=jx_hi {
                    let wx = kernel((jx as f64 - src_x) / fx);
                    let px = jx.clamp(0, img.width() as i64 - 1) as usize;
                    let w = wx * wy;
                    acc += w * img.get(px, py) as f64;
                    norm += w;
                }
            }
            out[dy * out_w + dx] = (acc / norm) as f32;
        }
    }
    rootsr::image::GrayImage::new(out_w, out_h, out).unwrap()
}

pub fn rand_image(rng: &mut Rng, w: usize, h: usize) -> rootsr::image::GrayImage {
    rootsr::image::GrayImage::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0))
}

pub fn assert_close(actual: &Tensor, expected: &Tensor, tol: f32, what: &str) {
    assert_eq!(actual.shape(), expected.shape(), "{what}: shape mismatch");
    for (i, (a, e)) in actual.data().iter().zip(expected.data()).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "{what}: element {i} differs, {a} vs {e}"
        );
    }
}

pub fn assert_rel_close(actual: f64, expected: f64, tol: f64, what: &str) {
    let gap = (actual - expected).abs() / actual.abs().max(expected.abs()).max(1e-8);
    assert!(gap <= tol, "{what}: {actual} vs {expected} (gap {gap})");
}
