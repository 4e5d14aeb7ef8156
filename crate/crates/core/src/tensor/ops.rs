//! Forward and backward passes for the layer primitives.
//!
//! Every backward function *accumulates* into the parameter gradient buffers
//! it is given (so repeated calls sum, matching gradient accumulation over a
//! batch) and returns a freshly allocated input gradient. Passing `None` for
//! the parameter gradients skips them entirely; the adversarial generator
//! step uses that to pull gradients through the discriminator without
//! disturbing its accumulated updates.
//!
//! All spatial loops gather or scatter through `f64` accumulation buffers,
//! one image plane at a time, and cast to `f32` once at the end.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output extent of a convolution along one axis.
pub fn conv_out_len(in_len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = in_len + 2 * padding;
    if padded < kernel {
        return Err(Error::InvalidParam(format!(
            "convolution kernel {kernel} exceeds padded extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn deconv_out_len(
    in_len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<usize> {
    if output_padding >= stride {
        return Err(Error::InvalidParam(format!(
            "output_padding {output_padding} must be smaller than stride {stride}"
        )));
    }
    let raw = (in_len - 1) * stride + kernel + output_padding;
    if raw <= 2 * padding {
        return Err(Error::InvalidParam(format!(
            "transposed convolution collapses: extent {raw} with padding {padding}"
        )));
    }
    Ok(raw - 2 * padding)
}

/// Inclusive range of output indices `o` with `0 <= o*stride + offset < in_len`.
/// Empty ranges come back as `(1, 0)`.
fn valid_range(out_len: usize, stride: usize, offset: isize, in_len: usize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    let max_num = in_len as isize - 1 - offset;
    if max_num < 0 || lo >= out_len {
        return (1, 0);
    }
    let hi = (max_num as usize / stride).min(out_len - 1);
    (lo, hi)
}

fn check_rank1(t: &Tensor, len: usize, context: &'static str) -> Result<()> {
    if t.shape() != [len] {
        return Err(Error::Shape {
            context,
            expected: format!("[{len}]"),
            actual: format!("{:?}", t.shape()),
        });
    }
    Ok(())
}

/// `dst[t] += a * src[src_lo + t*stride]` over all of `dst`.
#[inline]
fn axpy_gather(dst: &mut [f64], a: f64, src: &[f32], src_lo: usize, stride: usize) {
    if stride == 1 {
        let count = dst.len();
        for (d, s) in dst.iter_mut().zip(&src[src_lo..src_lo + count]) {
            *d += a * *s as f64;
        }
    } else {
        let mut i = src_lo;
        for d in dst {
            *d += a * src[i] as f64;
            i += stride;
        }
    }
}

/// `dst[dst_lo + t*stride] += a * src[t]` over all of `src`.
#[inline]
fn axpy_scatter(dst: &mut [f64], dst_lo: usize, stride: usize, a: f64, src: &[f32]) {
    if stride == 1 {
        for (d, s) in dst[dst_lo..dst_lo + src.len()].iter_mut().zip(src) {
            *d += a * *s as f64;
        }
    } else {
        let mut i = dst_lo;
        for s in src {
            dst[i] += a * *s as f64;
            i += stride;
        }
    }
}

/// Sum of `a[t] * b[b_lo + t*stride]` over all of `a`.
#[inline]
fn dot_strided(a: &[f32], b: &[f32], b_lo: usize, stride: usize) -> f64 {
    if stride == 1 {
        a.iter()
            .zip(&b[b_lo..b_lo + a.len()])
            .map(|(x, y)| *x as f64 * *y as f64)
            .sum()
    } else {
        let mut i = b_lo;
        let mut acc = 0.0;
        for x in a {
            acc += *x as f64 * b[i] as f64;
            i += stride;
        }
        acc
    }
}

/// 2D convolution. `input` is `[N, C_in, H, W]`, `weights` is
/// `[C_out, C_in, kH, kW]`, `bias` is `[C_out]`. Zero padding.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, c_in, h, w) = input.dims4()?;
    let (c_out, wc_in, kh, kw) = weights.dims4()?;
    if wc_in != c_in {
        return Err(Error::Shape {
            context: "conv2d",
            expected: format!("weights with {c_in} input channels"),
            actual: format!("{:?}", weights.shape()),
        });
    }
    check_rank1(bias, c_out, "conv2d bias")?;
    if stride == 0 {
        return Err(Error::InvalidParam("conv2d stride must be positive".into()));
    }
    let h_out = conv_out_len(h, kh, stride, padding)?;
    let w_out = conv_out_len(w, kw, stride, padding)?;

    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0f32; n * c_out * h_out * w_out];
    let mut plane = vec![0.0f64; h_out * w_out];

    for ni in 0..n {
        for co in 0..c_out {
            plane.fill(bias.data()[co] as f64);
            for ci in 0..c_in {
                let x_plane = &x[(ni * c_in + ci) * h * w..][..h * w];
                for ki in 0..kh {
                    let (ho_lo, ho_hi) = valid_range(h_out, stride, ki as isize - padding as isize, h);
                    for kj in 0..kw {
                        let wv = wt[((co * c_in + ci) * kh + ki) * kw + kj] as f64;
                        if wv == 0.0 {
                            continue;
                        }
                        let off_w = kj as isize - padding as isize;
                        let (wo_lo, wo_hi) = valid_range(w_out, stride, off_w, w);
                        if wo_lo > wo_hi {
                            continue;
                        }
                        let iw_lo = ((wo_lo * stride) as isize + off_w) as usize;
                        for ho in ho_lo..=ho_hi {
                            let ih = ho * stride + ki - padding;
                            let row = &x_plane[ih * w..][..w];
                            let dst = &mut plane[ho * w_out..][..w_out];
                            axpy_gather(&mut dst[wo_lo..=wo_hi], wv, row, iw_lo, stride);
                        }
                    }
                }
            }
            let dst = &mut out[(ni * c_out + co) * h_out * w_out..][..h_out * w_out];
            for (o, p) in dst.iter_mut().zip(&plane) {
                *o = *p as f32;
            }
        }
    }
    Tensor::new([n, c_out, h_out, w_out], out)
}

/// Backward pass of [`conv2d`]. Returns the input gradient; parameter
/// gradients, when requested, are accumulated in place.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_output: &Tensor,
    stride: usize,
    padding: usize,
    param_grads: Option<(&mut Tensor, &mut Tensor)>,
) -> Result<Tensor> {
    let (n, c_in, h, w) = input.dims4()?;
    let (c_out, _, kh, kw) = weights.dims4()?;
    let (gn, gc, h_out, w_out) = grad_output.dims4()?;
    if gn != n || gc != c_out {
        return Err(Error::Shape {
            context: "conv2d_backward",
            expected: format!("grad_output [{n}, {c_out}, ..]"),
            actual: format!("{:?}", grad_output.shape()),
        });
    }

    let x = input.data();
    let wt = weights.data();
    let go = grad_output.data();

    let mut grad_input = vec![0.0f32; n * c_in * h * w];
    let mut plane = vec![0.0f64; h * w];

    for ni in 0..n {
        for ci in 0..c_in {
            plane.fill(0.0);
            for co in 0..c_out {
                let go_plane = &go[(ni * c_out + co) * h_out * w_out..][..h_out * w_out];
                for ki in 0..kh {
                    let off_h = ki as isize - padding as isize;
                    let (ho_lo, ho_hi) = valid_range(h_out, stride, off_h, h);
                    for kj in 0..kw {
                        let wv = wt[((co * c_in + ci) * kh + ki) * kw + kj] as f64;
                        if wv == 0.0 {
                            continue;
                        }
                        let off_w = kj as isize - padding as isize;
                        let (wo_lo, wo_hi) = valid_range(w_out, stride, off_w, w);
                        if wo_lo > wo_hi {
                            continue;
                        }
                        let iw_lo = ((wo_lo * stride) as isize + off_w) as usize;
                        for ho in ho_lo..=ho_hi {
                            let ih = ((ho * stride) as isize + off_h) as usize;
                            let src = &go_plane[ho * w_out..][..w_out];
                            let dst = &mut plane[ih * w..][..w];
                            axpy_scatter(dst, iw_lo, stride, wv, &src[wo_lo..=wo_hi]);
                        }
                    }
                }
            }
            let dst = &mut grad_input[(ni * c_in + ci) * h * w..][..h * w];
            for (o, p) in dst.iter_mut().zip(&plane) {
                *o = *p as f32;
            }
        }
    }

    if let Some((grad_weights, grad_bias)) = param_grads {
        if grad_weights.shape() != weights.shape() {
            return Err(Error::Shape {
                context: "conv2d_backward grad_weights",
                expected: format!("{:?}", weights.shape()),
                actual: format!("{:?}", grad_weights.shape()),
            });
        }
        check_rank1(grad_bias, c_out, "conv2d_backward grad_bias")?;
        let gw = grad_weights.data_mut();
        for co in 0..c_out {
            let mut bias_acc = 0.0f64;
            for ni in 0..n {
                let go_plane = &go[(ni * c_out + co) * h_out * w_out..][..h_out * w_out];
                bias_acc += go_plane.iter().map(|&v| v as f64).sum::<f64>();
            }
            grad_bias.data_mut()[co] += bias_acc as f32;
            for ci in 0..c_in {
                for ki in 0..kh {
                    let off_h = ki as isize - padding as isize;
                    let (ho_lo, ho_hi) = valid_range(h_out, stride, off_h, h);
                    for kj in 0..kw {
                        let off_w = kj as isize - padding as isize;
                        let (wo_lo, wo_hi) = valid_range(w_out, stride, off_w, w);
                        if ho_lo > ho_hi || wo_lo > wo_hi {
                            continue;
                        }
                        let iw_lo = ((wo_lo * stride) as isize + off_w) as usize;
                        let mut acc = 0.0f64;
                        for ni in 0..n {
                            let go_plane =
                                &go[(ni * c_out + co) * h_out * w_out..][..h_out * w_out];
                            let x_plane = &x[(ni * c_in + ci) * h * w..][..h * w];
                            for ho in ho_lo..=ho_hi {
                                let ih = ((ho * stride) as isize + off_h) as usize;
                                let row = &x_plane[ih * w..][..w];
                                let src = &go_plane[ho * w_out..][..w_out];
                                acc += dot_strided(&src[wo_lo..=wo_hi], row, iw_lo, stride);
                            }
                        }
                        gw[((co * c_in + ci) * kh + ki) * kw + kj] += acc as f32;
                    }
                }
            }
        }
    }

    Tensor::new([n, c_in, h, w], grad_input)
}

/// 2D transposed convolution. `input` is `[N, C_in, H, W]`, `weights` is
/// `[C_in, C_out, kH, kW]`, `bias` is `[C_out]`.
pub fn deconv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    let (n, c_in, h, w) = input.dims4()?;
    let (wc_in, c_out, kh, kw) = weights.dims4()?;
    if wc_in != c_in {
        return Err(Error::Shape {
            context: "deconv2d",
            expected: format!("weights with {c_in} input channels"),
            actual: format!("{:?}", weights.shape()),
        });
    }
    check_rank1(bias, c_out, "deconv2d bias")?;
    if stride == 0 {
        return Err(Error::InvalidParam("deconv2d stride must be positive".into()));
    }
    let h_out = deconv_out_len(h, kh, stride, padding, output_padding)?;
    let w_out = deconv_out_len(w, kw, stride, padding, output_padding)?;

    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0f32; n * c_out * h_out * w_out];
    let mut plane = vec![0.0f64; h_out * w_out];

    for ni in 0..n {
        for co in 0..c_out {
            plane.fill(bias.data()[co] as f64);
            for ci in 0..c_in {
                let x_plane = &x[(ni * c_in + ci) * h * w..][..h * w];
                for ki in 0..kh {
                    let off_h = ki as isize - padding as isize;
                    let (h_lo, h_hi) = valid_range(h, stride, off_h, h_out);
                    for kj in 0..kw {
                        let wv = wt[((ci * c_out + co) * kh + ki) * kw + kj] as f64;
                        if wv == 0.0 {
                            continue;
                        }
                        let off_w = kj as isize - padding as isize;
                        let (w_lo, w_hi) = valid_range(w, stride, off_w, w_out);
                        if h_lo > h_hi || w_lo > w_hi {
                            continue;
                        }
                        let ow_lo = ((w_lo * stride) as isize + off_w) as usize;
                        for hi in h_lo..=h_hi {
                            let oh = ((hi * stride) as isize + off_h) as usize;
                            let row = &x_plane[hi * w..][..w];
                            let dst = &mut plane[oh * w_out..][..w_out];
                            axpy_scatter(dst, ow_lo, stride, wv, &row[w_lo..=w_hi]);
                        }
                    }
                }
            }
            let dst = &mut out[(ni * c_out + co) * h_out * w_out..][..h_out * w_out];
            for (o, p) in dst.iter_mut().zip(&plane) {
                *o = *p as f32;
            }
        }
    }
    Tensor::new([n, c_out, h_out, w_out], out)
}

/// Backward pass of [`deconv2d`].
pub fn deconv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_output: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
    param_grads: Option<(&mut Tensor, &mut Tensor)>,
) -> Result<Tensor> {
    let (n, c_in, h, w) = input.dims4()?;
    let (_, c_out, kh, kw) = weights.dims4()?;
    let h_out = deconv_out_len(h, kh, stride, padding, output_padding)?;
    let w_out = deconv_out_len(w, kw, stride, padding, output_padding)?;
    if grad_output.shape() != [n, c_out, h_out, w_out] {
        return Err(Error::Shape {
            context: "deconv2d_backward",
            expected: format!("[{n}, {c_out}, {h_out}, {w_out}]"),
            actual: format!("{:?}", grad_output.shape()),
        });
    }

    let x = input.data();
    let wt = weights.data();
    let go = grad_output.data();

    let mut grad_input = vec![0.0f32; n * c_in * h * w];
    let mut plane = vec![0.0f64; h * w];

    for ni in 0..n {
        for ci in 0..c_in {
            plane.fill(0.0);
            for co in 0..c_out {
                let go_plane = &go[(ni * c_out + co) * h_out * w_out..][..h_out * w_out];
                for ki in 0..kh {
                    let off_h = ki as isize - padding as isize;
                    let (h_lo, h_hi) = valid_range(h, stride, off_h, h_out);
                    for kj in 0..kw {
                        let wv = wt[((ci * c_out + co) * kh + ki) * kw + kj] as f64;
                        if wv == 0.0 {
                            continue;
                        }
                        let off_w = kj as isize - padding as isize;
                        let (w_lo, w_hi) = valid_range(w, stride, off_w, w_out);
                        if h_lo > h_hi || w_lo > w_hi {
                            continue;
                        }
                        let ow_lo = ((w_lo * stride) as isize + off_w) as usize;
                        for hi in h_lo..=h_hi {
                            let oh = ((hi * stride) as isize + off_h) as usize;
                            let src = &go_plane[oh * w_out..][..w_out];
                            let dst = &mut plane[hi * w..][..w];
                            axpy_gather(&mut dst[w_lo..=w_hi], wv, src, ow_lo, stride);
                        }
                    }
                }
            }
            let dst = &mut grad_input[(ni * c_in + ci) * h * w..][..h * w];
            for (o, p) in dst.iter_mut().zip(&plane) {
                *o = *p as f32;
            }
        }
    }

    if let Some((grad_weights, grad_bias)) = param_grads {
        if grad_weights.shape() != weights.shape() {
            return Err(Error::Shape {
                context: "deconv2d_backward grad_weights",
                expected: format!("{:?}", weights.shape()),
                actual: format!("{:?}", grad_weights.shape()),
            });
        }
        check_rank1(grad_bias, c_out, "deconv2d_backward grad_bias")?;
        let gw = grad_weights.data_mut();
        for co in 0..c_out {
            let mut bias_acc = 0.0f64;
            for ni in 0..n {
                let go_plane = &go[(ni * c_out + co) * h_out * w_out..][..h_out * w_out];
                bias_acc += go_plane.iter().map(|&v| v as f64).sum::<f64>();
            }
            grad_bias.data_mut()[co] += bias_acc as f32;
            for ci in 0..c_in {
                for ki in 0..kh {
                    let off_h = ki as isize - padding as isize;
                    let (h_lo, h_hi) = valid_range(h, stride, off_h, h_out);
                    for kj in 0..kw {
                        let off_w = kj as isize - padding as isize;
                        let (w_lo, w_hi) = valid_range(w, stride, off_w, w_out);
                        if h_lo > h_hi || w_lo > w_hi {
                            continue;
                        }
                        let ow_lo = ((w_lo * stride) as isize + off_w) as usize;
                        let mut acc = 0.0f64;
                        for ni in 0..n {
                            let go_plane =
                                &go[(ni * c_out + co) * h_out * w_out..][..h_out * w_out];
                            let x_plane = &x[(ni * c_in + ci) * h * w..][..h * w];
                            for hi in h_lo..=h_hi {
                                let oh = ((hi * stride) as isize + off_h) as usize;
                                let row = &x_plane[hi * w..][..w];
                                let src = &go_plane[oh * w_out..][..w_out];
                                acc += dot_strided(&row[w_lo..=w_hi], src, ow_lo, stride);
                            }
                        }
                        gw[((ci * c_out + co) * kh + ki) * kw + kj] += acc as f32;
                    }
                }
            }
        }
    }

    Tensor::new([n, c_in, h, w], grad_input)
}

/// Channelwise PReLU over `[N, C, H, W]`: `max(0, x) + slope[c] * min(0, x)`.
pub fn prelu(input: &Tensor, slopes: &Tensor) -> Result<Tensor> {
    let (_, c, _, _) = input.dims4()?;
    check_rank1(slopes, c, "prelu slopes")?;
    let plane = input.len() / input.shape()[0] / c;
    let mut out = input.clone();
    for (chunk_idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let a = slopes.data()[chunk_idx % c];
        for v in chunk {
            if *v < 0.0 {
                *v *= a;
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`prelu`]. The slope gradient, when requested, is
/// accumulated in place.
pub fn prelu_backward(
    input: &Tensor,
    slopes: &Tensor,
    grad_output: &Tensor,
    grad_slopes: Option<&mut Tensor>,
) -> Result<Tensor> {
    let (_, c, _, _) = input.dims4()?;
    check_rank1(slopes, c, "prelu slopes")?;
    if grad_output.shape() != input.shape() {
        return Err(Error::Shape {
            context: "prelu_backward",
            expected: format!("{:?}", input.shape()),
            actual: format!("{:?}", grad_output.shape()),
        });
    }
    let plane = input.len() / input.shape()[0] / c;
    let mut grad_input = grad_output.clone();
    let mut slope_acc = vec![0.0f64; c];
    for (chunk_idx, (gi_chunk, x_chunk)) in grad_input
        .data_mut()
        .chunks_mut(plane)
        .zip(input.data().chunks(plane))
        .enumerate()
    {
        let ci = chunk_idx % c;
        let a = slopes.data()[ci];
        let mut acc = 0.0f64;
        for (g, &x) in gi_chunk.iter_mut().zip(x_chunk) {
            if x < 0.0 {
                acc += *g as f64 * x as f64;
                *g *= a;
            }
        }
        slope_acc[ci] += acc;
    }
    if let Some(gs) = grad_slopes {
        check_rank1(gs, c, "prelu_backward grad_slopes")?;
        for (g, acc) in gs.data_mut().iter_mut().zip(&slope_acc) {
            *g += *acc as f32;
        }
    }
    Ok(grad_input)
}

/// Fully connected layer. `input` is `[N, F]`, `weights` is `[F, O]`,
/// `bias` is `[O]`; output is `[N, O]`.
pub fn linear(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f) = match input.shape()[..] {
        [n, f] => (n, f),
        _ => {
            return Err(Error::Shape {
                context: "linear",
                expected: "rank-2 input".into(),
                actual: format!("{:?}", input.shape()),
            })
        }
    };
    let (wf, o) = match weights.shape()[..] {
        [wf, o] => (wf, o),
        _ => {
            return Err(Error::Shape {
                context: "linear",
                expected: "rank-2 weights".into(),
                actual: format!("{:?}", weights.shape()),
            })
        }
    };
    if wf != f {
        return Err(Error::Shape {
            context: "linear",
            expected: format!("weights [{f}, *]"),
            actual: format!("{:?}", weights.shape()),
        });
    }
    check_rank1(bias, o, "linear bias")?;

    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0f32; n * o];
    let mut row_acc = vec![0.0f64; o];
    for ni in 0..n {
        for (acc, &b) in row_acc.iter_mut().zip(bias.data()) {
            *acc = b as f64;
        }
        let row = &x[ni * f..][..f];
        for (fi, &xv) in row.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let xv = xv as f64;
            let wrow = &wt[fi * o..][..o];
            for (acc, &wv) in row_acc.iter_mut().zip(wrow) {
                *acc += xv * wv as f64;
            }
        }
        for (dst, &acc) in out[ni * o..][..o].iter_mut().zip(&row_acc) {
            *dst = acc as f32;
        }
    }
    Tensor::new([n, o], out)
}

/// Backward pass of [`linear`].
pub fn linear_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_output: &Tensor,
    param_grads: Option<(&mut Tensor, &mut Tensor)>,
) -> Result<Tensor> {
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let o = weights.shape()[1];
    if grad_output.shape() != [n, o] {
        return Err(Error::Shape {
            context: "linear_backward",
            expected: format!("[{n}, {o}]"),
            actual: format!("{:?}", grad_output.shape()),
        });
    }
    let x = input.data();
    let wt = weights.data();
    let go = grad_output.data();

    let mut grad_input = vec![0.0f32; n * f];
    for ni in 0..n {
        let g_row = &go[ni * o..][..o];
        let dst = &mut grad_input[ni * f..][..f];
        for (fi, d) in dst.iter_mut().enumerate() {
            let wrow = &wt[fi * o..][..o];
            let mut acc = 0.0f64;
            for (&g, &wv) in g_row.iter().zip(wrow) {
                acc += g as f64 * wv as f64;
            }
            *d = acc as f32;
        }
    }

    if let Some((grad_weights, grad_bias)) = param_grads {
        if grad_weights.shape() != weights.shape() {
            return Err(Error::Shape {
                context: "linear_backward grad_weights",
                expected: format!("{:?}", weights.shape()),
                actual: format!("{:?}", grad_weights.shape()),
            });
        }
        check_rank1(grad_bias, o, "linear_backward grad_bias")?;
        let mut w_acc = vec![0.0f64; f * o];
        for ni in 0..n {
            let g_row = &go[ni * o..][..o];
            let x_row = &x[ni * f..][..f];
            for (fi, &xv) in x_row.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let xv = xv as f64;
                let dst = &mut w_acc[fi * o..][..o];
                for (d, &g) in dst.iter_mut().zip(g_row) {
                    *d += xv * g as f64;
                }
            }
        }
        for (d, &acc) in grad_weights.data_mut().iter_mut().zip(&w_acc) {
            *d += acc as f32;
        }
        let gb = grad_bias.data_mut();
        for oi in 0..o {
            let mut acc = 0.0f64;
            for ni in 0..n {
                acc += go[ni * o + oi] as f64;
            }
            gb[oi] += acc as f32;
        }
    }

    Tensor::new([n, f], grad_input)
}

/// Mean squared error over all elements.
pub fn mse_loss(prediction: &Tensor, target: &Tensor) -> Result<f64> {
    if prediction.shape() != target.shape() {
        return Err(Error::Shape {
            context: "mse_loss",
            expected: format!("{:?}", prediction.shape()),
            actual: format!("{:?}", target.shape()),
        });
    }
    let mut acc = 0.0f64;
    for (&p, &t) in prediction.data().iter().zip(target.data()) {
        let d = p as f64 - t as f64;
        acc += d * d;
    }
    Ok(acc / prediction.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to the prediction.
pub fn mse_loss_backward(prediction: &Tensor, target: &Tensor) -> Result<Tensor> {
    if prediction.shape() != target.shape() {
        return Err(Error::Shape {
            context: "mse_loss_backward",
            expected: format!("{:?}", prediction.shape()),
            actual: format!("{:?}", target.shape()),
        });
    }
    let scale = 2.0 / prediction.len() as f64;
    let data = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (scale * (p as f64 - t as f64)) as f32)
        .collect();
    Tensor::new(prediction.shape().to_vec(), data)
}

/// Numerically stable sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on logits, averaged over all elements, in the
/// overflow-free form `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    if logits.shape() != targets.shape() {
        return Err(Error::Shape {
            context: "bce_with_logits",
            expected: format!("{:?}", logits.shape()),
            actual: format!("{:?}", targets.shape()),
        });
    }
    let mut acc = 0.0f64;
    for (&z, &y) in logits.data().iter().zip(targets.data()) {
        let z = z as f64;
        let y = y as f64;
        acc += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    }
    Ok(acc / logits.len() as f64)
}

/// Gradient of [`bce_with_logits`] with respect to the logits:
/// `(sigmoid(z) - y) / count`.
pub fn bce_with_logits_backward(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    if logits.shape() != targets.shape() {
        return Err(Error::Shape {
            context: "bce_with_logits_backward",
            expected: format!("{:?}", logits.shape()),
            actual: format!("{:?}", targets.shape()),
        });
    }
    let scale = 1.0 / logits.len() as f64;
    let data = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &y)| (scale * (sigmoid(z as f64) - y as f64)) as f32)
        .collect();
    Tensor::new(logits.shape().to_vec(), data)
}

/// [`bce_with_logits`] against a single label shared by every element, the
/// form the adversarial losses use (real batches are all 1, fakes all 0).
pub fn bce_with_logits_const(logits: &Tensor, label: f32) -> f64 {
    let mut acc = 0.0f64;
    let y = label as f64;
    for &z in logits.data() {
        let z = z as f64;
        acc += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    }
    acc / logits.len() as f64
}

/// Gradient of [`bce_with_logits_const`] with respect to the logits.
pub fn bce_with_logits_const_backward(logits: &Tensor, label: f32) -> Tensor {
    let scale = 1.0 / logits.len() as f64;
    let y = label as f64;
    Tensor::from_fn(logits.shape().to_vec(), |i| {
        (scale * (sigmoid(logits.data()[i] as f64) - y)) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_identity_kernel() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let w = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv2d_box_kernel_with_padding() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let w = t(&[1, 1, 3, 3], &[1.0; 9]);
        let b = t(&[1], &[0.5]);
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[10.5, 10.5, 10.5, 10.5]);
    }

    #[test]
    fn conv2d_stride_two_shape() {
        let x = Tensor::zeros([1, 1, 8, 8]);
        let w = Tensor::zeros([3, 1, 3, 3]);
        let b = Tensor::zeros([3]);
        let y = conv2d(&x, &w, &b, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 4]);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        let w = Tensor::zeros([1, 3, 3, 3]);
        let b = Tensor::zeros([1]);
        assert!(conv2d(&x, &w, &b, 1, 1).is_err());
    }

    #[test]
    fn deconv2d_stride_one_matches_padded_conv_with_flipped_kernel() {
        // With stride 1, a transposed convolution equals a convolution with
        // the kernel flipped in both axes and padding k - 1 - p.
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let w_data: Vec<f32> = (1..=9).map(|v| v as f32 * 0.1).collect();
        let w_deconv = t(&[1, 1, 3, 3], &w_data);
        let flipped: Vec<f32> = w_data.iter().rev().copied().collect();
        let w_conv = t(&[1, 1, 3, 3], &flipped);
        let b = t(&[1], &[0.25]);
        let y_deconv = deconv2d(&x, &w_deconv, &b, 1, 1, 0).unwrap();
        let y_conv = conv2d(&x, &w_conv, &b, 1, 1).unwrap();
        assert_eq!(y_deconv.shape(), y_conv.shape());
        for (a, c) in y_deconv.data().iter().zip(y_conv.data()) {
            assert!((a - c).abs() < 1e-5, "{a} vs {c}");
        }
    }

    #[test]
    fn deconv2d_upsample_geometry() {
        let x = Tensor::zeros([1, 4, 16, 16]);
        let w = Tensor::zeros([4, 1, 9, 9]);
        let b = Tensor::zeros([1]);
        let y = deconv2d(&x, &w, &b, 4, 4, 3).unwrap();
        assert_eq!(y.shape(), &[1, 1, 64, 64]);
    }

    #[test]
    fn deconv2d_rejects_output_padding_not_below_stride() {
        let x = Tensor::zeros([1, 1, 4, 4]);
        let w = Tensor::zeros([1, 1, 3, 3]);
        let b = Tensor::zeros([1]);
        assert!(deconv2d(&x, &w, &b, 2, 1, 2).is_err());
    }

    #[test]
    fn prelu_applies_channel_slopes() {
        let x = t(&[1, 2, 1, 2], &[-1.0, 2.0, -3.0, 4.0]);
        let a = t(&[2], &[0.5, 0.1]);
        let y = prelu(&x, &a).unwrap();
        assert_eq!(y.data(), &[-0.5, 2.0, -0.3, 4.0]);
    }

    #[test]
    fn prelu_backward_routes_gradients() {
        let x = t(&[1, 1, 1, 3], &[-2.0, 0.0, 3.0]);
        let a = t(&[1], &[0.25]);
        let go = t(&[1, 1, 1, 3], &[1.0, 1.0, 1.0]);
        let mut ga = Tensor::zeros([1]);
        let gi = prelu_backward(&x, &a, &go, Some(&mut ga)).unwrap();
        assert_eq!(gi.data(), &[0.25, 1.0, 1.0]);
        assert_eq!(ga.data(), &[-2.0]);
    }

    #[test]
    fn linear_matches_hand_product() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[3.0, 0.0, 0.0, 3.0]);
        let b = t(&[2], &[1.0, 1.0]);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[4.0, 7.0]);
    }

    #[test]
    fn linear_identity_weight_passes_input_through() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let w = Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::zeros([3]);
        assert_eq!(linear(&x, &w, &b).unwrap().data(), x.data());
    }

    #[test]
    fn bce_const_matches_tensor_form() {
        let z = t(&[3], &[0.7, -0.1, 2.0]);
        let ones = Tensor::filled([3], 1.0);
        assert!((bce_with_logits_const(&z, 1.0) - bce_with_logits(&z, &ones).unwrap()).abs() < 1e-15);
        let g1 = bce_with_logits_const_backward(&z, 1.0);
        let g2 = bce_with_logits_backward(&z, &ones).unwrap();
        assert_eq!(g1.data(), g2.data());
    }

    #[test]
    fn bce_at_zero_logit_is_ln2_for_both_labels() {
        let z = Tensor::zeros([4]);
        assert!((bce_with_logits_const(&z, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_with_logits_const(&z, 0.0) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn mse_loss_is_mean_of_squares() {
        let p = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        let q = t(&[4], &[1.0, 1.0, 1.0, 1.0]);
        assert!((mse_loss(&p, &q).unwrap() - (0.0 + 1.0 + 4.0 + 9.0) / 4.0).abs() < 1e-12);
        let g = mse_loss_backward(&p, &q).unwrap();
        assert_eq!(g.data(), &[0.0, 0.5, 1.0, 1.5]);
    }

    #[test]
    fn bce_with_logits_matches_direct_formula_in_safe_range() {
        let z = t(&[2], &[0.3, -1.2]);
        let y = t(&[2], &[1.0, 0.0]);
        let direct = |z: f64, y: f64| -(y * sigmoid(z).ln() + (1.0 - y) * (1.0 - sigmoid(z)).ln());
        let expected = (direct(0.3f32 as f64, 1.0) + direct(-1.2f32 as f64, 0.0)) / 2.0;
        assert!((bce_with_logits(&z, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn bce_with_logits_survives_extreme_logits() {
        let z = t(&[2], &[500.0, -500.0]);
        let y = t(&[2], &[1.0, 0.0]);
        let loss = bce_with_logits(&z, &y).unwrap();
        assert!(loss.is_finite());
        assert!(loss.abs() < 1e-9);
        let z_bad = t(&[2], &[500.0, -500.0]);
        let y_flip = t(&[2], &[0.0, 1.0]);
        let loss = bce_with_logits(&z_bad, &y_flip).unwrap();
        assert!((loss - 500.0).abs() < 1e-9);
    }

    #[test]
    fn bce_gradient_is_sigmoid_minus_target_over_count() {
        let z = t(&[2], &[0.0, 2.0]);
        let y = t(&[2], &[1.0, 0.0]);
        let g = bce_with_logits_backward(&z, &y).unwrap();
        assert!((g.data()[0] as f64 - (0.5 - 1.0) / 2.0).abs() < 1e-7);
        assert!((g.data()[1] as f64 - sigmoid(2.0) / 2.0).abs() < 1e-7);
    }

    #[test]
    fn valid_range_clips_to_borders() {
        assert_eq!(valid_range(4, 1, -1, 4), (1, 3));
        assert_eq!(valid_range(4, 1, 1, 4), (0, 2));
        assert_eq!(valid_range(4, 2, -1, 5), (1, 2));
        assert_eq!(valid_range(3, 1, 5, 4), (1, 0));
    }
}
