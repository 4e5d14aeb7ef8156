//! Gradient verification battery: every differentiable primitive plus the
//! three full models, compared against central finite differences.
//!
//! Each check builds a random instance, evaluates a scalar loss whose
//! cotangent is also random (a plain sum would hide sign and permutation
//! errors), computes analytic gradients through the backward pass, and
//! probes them element-by-element. Model composites are spot-checked on a
//! deterministic spread of indices; a full sweep over every weight would
//! take minutes without telling us more.
//!
//! Gaps are normalized per tensor by the gradient's largest magnitude, not
//! element-by-element: the layers compute in f32, so the finite difference
//! of a near-zero component is dominated by rounding of the forward pass
//! and its pointwise ratio is meaningless even for a correct backward pass.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::models::{build_discriminator, build_fsrcnn, build_generator, FsrcnnConfig, Sequential};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::tensor::gradcheck::spread_indices;
use crate::tensor::ops;
use crate::tensor::Tensor;

pub const GRADCHECK_OPS: &[&str] = &[
    "conv2d",
    "deconv2d",
    "prelu",
    "linear",
    "mse_loss",
    "bce_with_logits",
    "fsrcnn",
    "generator",
    "discriminator",
];

/// Acceptance bound on the worst normalized gap.
pub const GRADCHECK_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub op: &'static str,
    pub max_gap: f64,
}

fn rand_tensor(rng: &mut Rng, shape: Vec<usize>, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero, so no finite-difference step straddles the
/// PReLU kink.
fn rand_tensor_offzero(rng: &mut Rng, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f32 = rng.gen_range(0.05..1.0);
        if rng.gen::<bool>() {
            v
        } else {
            -v
        }
    })
}

fn dot(t: &Tensor, cot: &Tensor) -> f64 {
    t.data()
        .iter()
        .zip(cot.data())
        .map(|(a, c)| *a as f64 * *c as f64)
        .sum()
}

fn max_abs(values: &[f32]) -> f64 {
    values.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()))
}

fn central_diff(f: &mut impl FnMut(&Tensor) -> f64, probe: &mut Tensor, i: usize, eps: f64) -> f64 {
    let original = probe.data()[i];
    probe.data_mut()[i] = original + eps as f32;
    let plus = f(probe);
    probe.data_mut()[i] = original - eps as f32;
    let minus = f(probe);
    probe.data_mut()[i] = original;
    // Use the perturbation that actually landed in f32; eps itself may not
    // be exactly representable around `original`.
    let step = (original + eps as f32) as f64 - (original - eps as f32) as f64;
    (plus - minus) / step
}

/// Worst |analytic − numeric| over the probed indices of one tensor, scaled
/// by the gradient's largest magnitude.
fn tensor_gap(
    mut f: impl FnMut(&Tensor) -> f64,
    point: &Tensor,
    analytic: &Tensor,
    eps: f64,
    sample: Option<usize>,
) -> f64 {
    assert_eq!(point.shape(), analytic.shape());
    let indices: Vec<usize> = match sample {
        Some(k) => spread_indices(point.len(), k),
        None => (0..point.len()).collect(),
    };
    let mut probe = point.clone();
    let mut worst_abs = 0.0f64;
    let mut scale = max_abs(analytic.data());
    for &i in &indices {
        let numeric = central_diff(&mut f, &mut probe, i, eps);
        // A probe whose f32 step rounded away (or a non-finite loss) measures
        // nothing; report an unbounded gap instead of skipping it.
        if !numeric.is_finite() {
            return f64::INFINITY;
        }
        scale = scale.max(numeric.abs());
        worst_abs = worst_abs.max((analytic.data()[i] as f64 - numeric).abs());
    }
    worst_abs / scale.max(1e-8)
}

fn check_conv2d(seed: u64, eps: f64) -> Result<f64> {
    let mut rng = rng_from(seed);
    let (n, c_in, c_out, k) = (2usize, 2usize, 3usize, 3usize);
    let (h, w) = (5usize, 4usize);
    let stride = rng.gen_range(1..=2);
    let padding = rng.gen_range(0..=1);
    let x = rand_tensor(&mut rng, vec![n, c_in, h, w], -1.0, 1.0);
    let wt = rand_tensor(&mut rng, vec![c_out, c_in, k, k], -1.0, 1.0);
    let b = rand_tensor(&mut rng, vec![c_out], -0.5, 0.5);
    let out = ops::conv2d(&x, &wt, &b, stride, padding)?;
    let cot = rand_tensor(&mut rng, out.shape().to_vec(), -1.0, 1.0);

    let mut gw = Tensor::zeros(wt.shape().to_vec());
    let mut gb = Tensor::zeros(b.shape().to_vec());
    let gx = ops::conv2d_backward(&x, &wt, &cot, stride, padding, Some((&mut gw, &mut gb)))?;

    let f_x = |t: &Tensor| dot(&ops::conv2d(t, &wt, &b, stride, padding).unwrap(), &cot);
    let f_w = |t: &Tensor| dot(&ops::conv2d(&x, t, &b, stride, padding).unwrap(), &cot);
    let f_b = |t: &Tensor| dot(&ops::conv2d(&x, &wt, t, stride, padding).unwrap(), &cot);
    Ok(tensor_gap(f_x, &x, &gx, eps, None)
        .max(tensor_gap(f_w, &wt, &gw, eps, None))
        .max(tensor_gap(f_b, &b, &gb, eps, None)))
}

fn check_deconv2d(seed: u64, eps: f64) -> Result<f64> {
    let mut rng = rng_from(seed);
    let (n, c_in, c_out, k) = (2usize, 2usize, 2usize, 3usize);
    let (h, w) = (3usize, 4usize);
    let stride = rng.gen_range(1..=3);
    let output_padding = rng.gen_range(0..stride);
    let padding = rng.gen_range(0..=1);
    let x = rand_tensor(&mut rng, vec![n, c_in, h, w], -1.0, 1.0);
    let wt = rand_tensor(&mut rng, vec![c_in, c_out, k, k], -1.0, 1.0);
    let b = rand_tensor(&mut rng, vec![c_out], -0.5, 0.5);
    let out = ops::deconv2d(&x, &wt, &b, stride, padding, output_padding)?;
    let cot = rand_tensor(&mut rng, out.shape().to_vec(), -1.0, 1.0);

    let mut gw = Tensor::zeros(wt.shape().to_vec());
    let mut gb = Tensor::zeros(b.shape().to_vec());
    let gx = ops::deconv2d_backward(
        &x,
        &wt,
        &cot,
        stride,
        padding,
        output_padding,
        Some((&mut gw, &mut gb)),
    )?;

    let f_x =
        |t: &Tensor| dot(&ops::deconv2d(t, &wt, &b, stride, padding, output_padding).unwrap(), &cot);
    let f_w =
        |t: &Tensor| dot(&ops::deconv2d(&x, t, &b, stride, padding, output_padding).unwrap(), &cot);
    let f_b =
        |t: &Tensor| dot(&ops::deconv2d(&x, &wt, t, stride, padding, output_padding).unwrap(), &cot);
    Ok(tensor_gap(f_x, &x, &gx, eps, None)
        .max(tensor_gap(f_w, &wt, &gw, eps, None))
        .max(tensor_gap(f_b, &b, &gb, eps, None)))
}

fn check_prelu(seed: u64, eps: f64) -> Result<f64> {
    let mut rng = rng_from(seed);
    let x = rand_tensor_offzero(&mut rng, vec![2, 3, 4, 3]);
    let slopes = rand_tensor(&mut rng, vec![3], 0.05, 0.5);
    let out = ops::prelu(&x, &slopes)?;
    let cot = rand_tensor(&mut rng, out.shape().to_vec(), -1.0, 1.0);

    let mut gs = Tensor::zeros(vec![3]);
    let gx = ops::prelu_backward(&x, &slopes, &cot, Some(&mut gs))?;

    let f_x = |t: &Tensor| dot(&ops::prelu(t, &slopes).unwrap(), &cot);
    let f_s = |t: &Tensor| dot(&ops::prelu(&x, t).unwrap(), &cot);
    Ok(tensor_gap(f_x, &x, &gx, eps, None).max(tensor_gap(f_s, &slopes, &gs, eps, None)))
}

fn check_linear(seed: u64, eps: f64) -> Result<f64> {
    let mut rng = rng_from(seed);
    let (n, f, o) = (3usize, 5usize, 4usize);
    let x = rand_tensor(&mut rng, vec![n, f], -1.0, 1.0);
    let wt = rand_tensor(&mut rng, vec![f, o], -1.0, 1.0);
    let b = rand_tensor(&mut rng, vec![o], -0.5, 0.5);
    let out = ops::linear(&x, &wt, &b)?;
    let cot = rand_tensor(&mut rng, out.shape().to_vec(), -1.0, 1.0);

    let mut gw = Tensor::zeros(wt.shape().to_vec());
    let mut gb = Tensor::zeros(b.shape().to_vec());
    let gx = ops::linear_backward(&x, &wt, &cot, Some((&mut gw, &mut gb)))?;

    let f_x = |t: &Tensor| dot(&ops::linear(t, &wt, &b).unwrap(), &cot);
    let f_w = |t: &Tensor| dot(&ops::linear(&x, t, &b).unwrap(), &cot);
    let f_b = |t: &Tensor| dot(&ops::linear(&x, &wt, t).unwrap(), &cot);
    Ok(tensor_gap(f_x, &x, &gx, eps, None)
        .max(tensor_gap(f_w, &wt, &gw, eps, None))
        .max(tensor_gap(f_b, &b, &gb, eps, None)))
}

fn check_mse_loss(seed: u64, eps: f64) -> Result<f64> {
    let mut rng = rng_from(seed);
    let pred = rand_tensor(&mut rng, vec![2, 1, 4, 4], -1.0, 1.0);
    let target = rand_tensor(&mut rng, vec![2, 1, 4, 4], -1.0, 1.0);
    let grad = ops::mse_loss_backward(&pred, &target)?;
    let f = |t: &Tensor| ops::mse_loss(t, &target).unwrap();
    Ok(tensor_gap(f, &pred, &grad, eps, None))
}

fn check_bce_with_logits(seed: u64, eps: f64) -> Result<f64> {
    let mut rng = rng_from(seed);
    let logits = rand_tensor(&mut rng, vec![6, 1], -3.0, 3.0);
    let targets = Tensor::from_fn(vec![6, 1], |_| if rng.gen::<bool>() { 1.0 } else { 0.0 });

    let grad = ops::bce_with_logits_backward(&logits, &targets)?;
    let f = |t: &Tensor| ops::bce_with_logits(t, &targets).unwrap();
    let gap = tensor_gap(f, &logits, &grad, eps, None);

    let grad_const = ops::bce_with_logits_const_backward(&logits, 1.0);
    let f_const = |t: &Tensor| ops::bce_with_logits_const(t, 1.0);
    Ok(gap.max(tensor_gap(f_const, &logits, &grad_const, eps, None)))
}

/// Spot-checks the accumulated parameter gradients of `net` against central
/// differences of `eval`'s loss, on `per_tensor` spread indices of every
/// parameter. The gradients must already be in the parameters' grad buffers.
/// `eval` returns the loss plus the PReLU sign pattern; probes whose steps
/// flip any sign land across a kink and are skipped, because there the
/// central difference measures a mix of two linear pieces rather than the
/// derivative the backward pass correctly reports.
fn guarded_params_gap(
    net: &mut Sequential,
    eval: &mut impl FnMut(&Sequential) -> (f64, Vec<bool>),
    eps: f64,
    per_tensor: usize,
) -> f64 {
    let (_, signs_base) = eval(net);
    let n_params = net.params_mut().len();
    let mut worst = 0.0f64;
    for pi in 0..n_params {
        let (len, analytic) = {
            let p = &mut net.params_mut()[pi];
            (p.value.len(), p.grad.data().to_vec())
        };
        let mut worst_abs = 0.0f64;
        let mut scale = max_abs(&analytic);
        for &i in &spread_indices(len, per_tensor) {
            let original = net.params_mut()[pi].value.data()[i];
            net.params_mut()[pi].value.data_mut()[i] = original + eps as f32;
            let (plus, signs_plus) = eval(net);
            net.params_mut()[pi].value.data_mut()[i] = original - eps as f32;
            let (minus, signs_minus) = eval(net);
            net.params_mut()[pi].value.data_mut()[i] = original;
            if signs_plus != signs_base || signs_minus != signs_base {
                continue;
            }
            let step = (original + eps as f32) as f64 - (original - eps as f32) as f64;
            let numeric = (plus - minus) / step;
            if !numeric.is_finite() {
                return f64::INFINITY;
            }
            scale = scale.max(numeric.abs());
            worst_abs = worst_abs.max((analytic[i] as f64 - numeric).abs());
        }
        worst = worst.max(worst_abs / scale.max(1e-8));
    }
    worst
}

/// Same kink guard for the gradient with respect to the network input.
fn guarded_input_gap(
    eval: &mut impl FnMut(&Tensor) -> (f64, Vec<bool>),
    point: &Tensor,
    analytic: &Tensor,
    eps: f64,
    sample: usize,
) -> f64 {
    let (_, signs_base) = eval(point);
    let mut probe = point.clone();
    let mut worst_abs = 0.0f64;
    let mut scale = max_abs(analytic.data());
    for &i in &spread_indices(point.len(), sample) {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + eps as f32;
        let (plus, signs_plus) = eval(&probe);
        probe.data_mut()[i] = original - eps as f32;
        let (minus, signs_minus) = eval(&probe);
        probe.data_mut()[i] = original;
        if signs_plus != signs_base || signs_minus != signs_base {
            continue;
        }
        let step = (original + eps as f32) as f64 - (original - eps as f32) as f64;
        let numeric = (plus - minus) / step;
        if !numeric.is_finite() {
            return f64::INFINITY;
        }
        scale = scale.max(numeric.abs());
        worst_abs = worst_abs.max((analytic.data()[i] as f64 - numeric).abs());
    }
    worst_abs / scale.max(1e-8)
}

fn check_fsrcnn(seed: u64, eps: f64) -> Result<f64> {
    let mut rng = rng_from(derive_seed(seed, "gc-data", 0));
    let config = FsrcnnConfig {
        d: 8,
        s: 4,
        m: 1,
        n: 2,
    };
    let mut model = build_fsrcnn(config, derive_seed(seed, "gc-init", 0))?;
    let x = rand_tensor(&mut rng, vec![1, 1, 5, 4], 0.0, 1.0);
    let target = rand_tensor(&mut rng, vec![1, 1, 10, 8], 0.0, 1.0);

    let (pred, cache) = model.forward_cached(&x)?;
    let grad = ops::mse_loss_backward(&pred, &target)?;
    model.net.zero_grads();
    let gx = model.backward(&cache, &grad)?;

    let net = &mut model.net;
    let mut eval = |net: &Sequential| {
        let (out, signs) = net.forward_with_signs(&x).unwrap();
        (ops::mse_loss(&out, &target).unwrap(), signs)
    };
    let gap = guarded_params_gap(net, &mut eval, eps, 16);

    let net = &model.net;
    let mut eval_at = |t: &Tensor| {
        let (out, signs) = net.forward_with_signs(t).unwrap();
        (ops::mse_loss(&out, &target).unwrap(), signs)
    };
    Ok(gap.max(guarded_input_gap(&mut eval_at, &x, &gx, eps, 12)))
}

fn check_generator(seed: u64, eps: f64) -> Result<f64> {
    let mut rng = rng_from(derive_seed(seed, "gc-data", 1));
    let mut model = build_generator(derive_seed(seed, "gc-init", 1));
    let x = rand_tensor(&mut rng, vec![1, 1, 6, 6], 0.0, 1.0);
    let target = rand_tensor(&mut rng, vec![1, 1, 6, 6], 0.0, 1.0);

    let (pred, cache) = model.forward_cached(&x)?;
    let grad = ops::mse_loss_backward(&pred, &target)?;
    model.net.zero_grads();
    let gx = model.backward(&cache, &grad)?;

    let residual = |net: &Sequential, t: &Tensor| {
        let (mut out, signs) = net.forward_with_signs(t).unwrap();
        out.add_scaled(t, 1.0);
        (out, signs)
    };
    let net = &mut model.net;
    let mut eval = |net: &Sequential| {
        let (out, signs) = residual(net, &x);
        (ops::mse_loss(&out, &target).unwrap(), signs)
    };
    let gap = guarded_params_gap(net, &mut eval, eps, 10);

    let net = &model.net;
    let mut eval_at = |t: &Tensor| {
        let (out, signs) = residual(net, t);
        (ops::mse_loss(&out, &target).unwrap(), signs)
    };
    Ok(gap.max(guarded_input_gap(&mut eval_at, &x, &gx, eps, 10)))
}

fn check_discriminator(seed: u64, eps: f64) -> Result<f64> {
    let mut rng = rng_from(derive_seed(seed, "gc-data", 2));
    let mut model = build_discriminator(derive_seed(seed, "gc-init", 2));
    let x = rand_tensor(&mut rng, vec![1, 1, 64, 64], 0.0, 1.0);

    let (logits, cache) = model.forward_cached(&x)?;
    let grad = ops::bce_with_logits_const_backward(&logits, 1.0);
    model.net.zero_grads();
    let gx = model.backward(&cache, &grad, true)?;

    let net = &mut model.net;
    let mut eval = |net: &Sequential| {
        let (out, signs) = net.forward_with_signs(&x).unwrap();
        (ops::bce_with_logits_const(&out, 1.0), signs)
    };
    let gap = guarded_params_gap(net, &mut eval, eps, 6);

    let net = &model.net;
    let mut eval_at = |t: &Tensor| {
        let (out, signs) = net.forward_with_signs(t).unwrap();
        (ops::bce_with_logits_const(&out, 1.0), signs)
    };
    Ok(gap.max(guarded_input_gap(&mut eval_at, &x, &gx, eps, 8)))
}

fn run_op(op: &'static str, n_seeds: usize, eps: f64) -> Result<GradCheck> {
    let check: fn(u64, f64) -> Result<f64> = match op {
        "conv2d" => check_conv2d,
        "deconv2d" => check_deconv2d,
        "prelu" => check_prelu,
        "linear" => check_linear,
        "mse_loss" => check_mse_loss,
        "bce_with_logits" => check_bce_with_logits,
        "fsrcnn" => check_fsrcnn,
        "generator" => check_generator,
        "discriminator" => check_discriminator,
        other => {
            return Err(Error::Config(format!(
                "unknown gradcheck op {other:?} (expected one of {})",
                GRADCHECK_OPS.join(", ")
            )))
        }
    };
    let op_index = GRADCHECK_OPS.iter().position(|&o| o == op).unwrap() as u64;
    let mut max_gap = 0.0f64;
    for s in 0..n_seeds {
        let seed = derive_seed(11, "gradcheck", (op_index << 32) ^ s as u64);
        max_gap = max_gap.max(check(seed, eps)?);
    }
    Ok(GradCheck { op, max_gap })
}

/// Runs the battery for the named ops (all of them when `ops` is empty),
/// `n_seeds` random instances each.
pub fn run_gradcheck(ops: &[String], n_seeds: usize, eps: f64) -> Result<Vec<GradCheck>> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!("eps must be a positive real, got {eps}")));
    }
    if n_seeds == 0 {
        return Err(Error::Config("gradcheck needs at least one seed".into()));
    }
    let selected: Vec<&'static str> = if ops.is_empty() {
        GRADCHECK_OPS.to_vec()
    } else {
        let mut out = Vec::with_capacity(ops.len());
        for name in ops {
            match GRADCHECK_OPS.iter().find(|&&o| o == name) {
                Some(&o) => out.push(o),
                None => {
                    return Err(Error::Config(format!(
                        "unknown gradcheck op {name:?} (expected one of {})",
                        GRADCHECK_OPS.join(", ")
                    )))
                }
            }
        }
        out
    };
    selected.into_iter().map(|op| run_op(op, n_seeds, eps)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_on_a_few_seeds() {
        let all = run_gradcheck(&[], 2, crate::tensor::gradcheck::DEFAULT_EPS).unwrap();
        assert_eq!(all.len(), GRADCHECK_OPS.len());
        for check in &all {
            assert!(
                check.max_gap < GRADCHECK_TOL,
                "{} gap {}",
                check.op,
                check.max_gap
            );
        }
    }

    #[test]
    fn a_broken_gradient_is_caught() {
        // Sign-flipped analytic gradient must blow past the tolerance.
        let mut rng = rng_from(3);
        let pred = rand_tensor(&mut rng, vec![2, 1, 3, 3], -1.0, 1.0);
        let target = rand_tensor(&mut rng, vec![2, 1, 3, 3], -1.0, 1.0);
        let mut wrong = ops::mse_loss_backward(&pred, &target).unwrap();
        for v in wrong.data_mut() {
            *v = -*v;
        }
        let f = |t: &Tensor| ops::mse_loss(t, &target).unwrap();
        let gap = tensor_gap(f, &pred, &wrong, 1e-3, None);
        assert!(gap > 0.5, "gap {gap}");
    }

    #[test]
    fn unknown_op_is_rejected() {
        let err = run_gradcheck(&["softmax".into()], 1, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn op_filter_runs_only_that_op() {
        let one = run_gradcheck(&["prelu".into()], 3, 1e-3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].op, "prelu");
    }
}
