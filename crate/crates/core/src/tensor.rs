//! Dense tensors, trainable parameters and the Adam optimizer.
//!
//! Tensors are plain row-major `f32` buffers; there is no computation graph.
//! Each layer in [`ops`](crate::tensor::ops) exposes an explicit
//! forward/backward pair and the fixed network architectures chain them by
//! hand. Reductions accumulate in `f64` so results are deterministic and the
//! finite-difference checks in [`gradcheck`](crate::tensor::gradcheck) stay
//! comfortably inside their tolerances.

pub mod gradcheck;
pub mod ops;

use crate::error::{Error, Result};

/// Dense N-dimensional array of `f32` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly and that
    /// every extent is positive.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidParam(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                context: "Tensor::new",
                expected: format!("{numel} values for shape {shape:?}"),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Tensor {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f32) -> Tensor {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f32) -> Tensor {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..numel).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape {
                context: "Tensor::reshape",
                expected: format!("shape with {} elements", self.data.len()),
                actual: format!("{shape:?} ({numel} elements)"),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Convenience accessor for `[N, C, H, W]` tensors.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Shape {
                context: "Tensor::dims4",
                expected: "rank-4 tensor".into(),
                actual: format!("{:?}", self.shape),
            }),
        }
    }

    pub fn fill(&mut self, value: f32) {
        self.data.fill(value);
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f32) {
        debug_assert_eq!(self.shape, other.shape);
        for (d, s) in self.data.iter_mut().zip(&other.data) {
            *d += scale * s;
        }
    }

    /// Inner product accumulated in f64.
    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Configuration for the Adam update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f32) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid Adam configuration: lr={} beta1={} beta2={} eps={}",
                self.learning_rate, self.beta1, self.beta2, self.epsilon
            )))
        }
    }
}

/// A learnable tensor with its gradient and Adam moment state.
///
/// Backward passes *add* into `grad`; [`adam_step`] consumes and clears it.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Parameter {
        let shape = value.shape().to_vec();
        Parameter {
            value,
            grad: Tensor::zeros(shape.clone()),
            adam_m: Tensor::zeros(shape.clone()),
            adam_v: Tensor::zeros(shape),
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// One Adam update with bias correction. Clears the gradient afterwards and
/// increments the parameter's step count.
pub fn adam_step(param: &mut Parameter, config: &AdamConfig) {
    param.step_count += 1;
    let t = param.step_count as i32;
    let b1 = config.beta1;
    let b2 = config.beta2;
    let bc1 = 1.0 - (b1 as f64).powi(t);
    let bc2 = 1.0 - (b2 as f64).powi(t);
    let lr = config.learning_rate as f64;
    let eps = config.epsilon as f64;

    let n = param.value.len();
    let value = param.value.data_mut();
    let grad = param.grad.data_mut();
    let m = param.adam_m.data_mut();
    let v = param.adam_v.data_mut();
    for i in 0..n {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] as f64 / bc1;
        let v_hat = v[i] as f64 / bc2;
        value[i] -= (lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        grad[i] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        let err = Tensor::new([2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn new_rejects_zero_extent() {
        assert!(Tensor::new([2, 0], vec![]).is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::new([2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let r = t.reshape([3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape([4, 2]).is_err());
    }

    #[test]
    fn adam_zero_gradient_with_zero_moments_is_fixed_point() {
        let mut p = Parameter::new(Tensor::filled([3], 1.5));
        adam_step(&mut p, &AdamConfig::default());
        assert_eq!(p.value.data(), &[1.5, 1.5, 1.5]);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn adam_zero_gradient_only_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = Parameter::new(Tensor::filled([1], 0.0));
        p.grad.data_mut()[0] = 0.5;
        adam_step(&mut p, &cfg);
        let (m1, v1) = (p.adam_m.data()[0], p.adam_v.data()[0]);
        adam_step(&mut p, &cfg); // grad now zero
        assert_eq!(p.adam_m.data()[0], cfg.beta1 * m1);
        assert_eq!(p.adam_v.data()[0], cfg.beta2 * v1);
        assert_eq!(p.step_count, 2);
    }

    #[test]
    fn adam_clears_gradient() {
        let mut p = Parameter::new(Tensor::filled([2], 0.0));
        p.grad.fill(1.0);
        adam_step(&mut p, &AdamConfig::default());
        assert_eq!(p.grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn adam_config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig {
            beta1: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AdamConfig {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
