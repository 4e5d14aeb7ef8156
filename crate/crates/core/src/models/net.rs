//! Layer stack shared by all four architectures.
//!
//! A [`Sequential`] is a flat list of layers. `forward_cached` records each
//! layer's input so `backward` can replay the chain in reverse; passing
//! `accumulate = false` propagates the input gradient without touching the
//! parameter gradients, which is how generator updates flow through a frozen
//! discriminator.

use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::ops::{
    conv2d, conv2d_backward, deconv2d, deconv2d_backward, linear, linear_backward, prelu,
    prelu_backward,
};
use crate::tensor::{Parameter, Tensor};

pub const PRELU_INIT_SLOPE: f32 = 0.25;

#[derive(Debug, Clone)]
pub enum Layer {
    Conv {
        weights: Parameter,
        bias: Parameter,
        stride: usize,
        padding: usize,
    },
    Deconv {
        weights: Parameter,
        bias: Parameter,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    Prelu {
        slopes: Parameter,
    },
    Flatten,
    Linear {
        weights: Parameter,
        bias: Parameter,
    },
}

fn he_normal(rng: &mut Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("std is finite");
    Tensor::from_fn(shape, |_| dist.sample(rng) as f32)
}

/// Convolution layer; arguments follow the `Conv(kernel, out, in)` notation
/// used throughout this crate's architecture docs.
pub fn conv_layer(
    rng: &mut Rng,
    kernel: usize,
    c_out: usize,
    c_in: usize,
    stride: usize,
    padding: usize,
) -> Layer {
    Layer::Conv {
        weights: Parameter::new(he_normal(
            rng,
            vec![c_out, c_in, kernel, kernel],
            c_in * kernel * kernel,
        )),
        bias: Parameter::new(Tensor::zeros([c_out])),
        stride,
        padding,
    }
}

pub fn deconv_layer(
    rng: &mut Rng,
    kernel: usize,
    c_out: usize,
    c_in: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Layer {
    Layer::Deconv {
        weights: Parameter::new(he_normal(
            rng,
            vec![c_in, c_out, kernel, kernel],
            c_in * kernel * kernel,
        )),
        bias: Parameter::new(Tensor::zeros([c_out])),
        stride,
        padding,
        output_padding,
    }
}

pub fn prelu_layer(channels: usize) -> Layer {
    Layer::Prelu {
        slopes: Parameter::new(Tensor::filled([channels], PRELU_INIT_SLOPE)),
    }
}

pub fn linear_layer(rng: &mut Rng, in_features: usize, out_features: usize) -> Layer {
    Layer::Linear {
        weights: Parameter::new(he_normal(
            rng,
            vec![in_features, out_features],
            in_features,
        )),
        bias: Parameter::new(Tensor::zeros([out_features])),
    }
}

impl Layer {
    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv {
                weights,
                bias,
                stride,
                padding,
            } => conv2d(input, &weights.value, &bias.value, *stride, *padding),
            Layer::Deconv {
                weights,
                bias,
                stride,
                padding,
                output_padding,
            } => deconv2d(
                input,
                &weights.value,
                &bias.value,
                *stride,
                *padding,
                *output_padding,
            ),
            Layer::Prelu { slopes } => prelu(input, &slopes.value),
            Layer::Flatten => {
                let (n, c, h, w) = input.dims4()?;
                input.reshape([n, c * h * w])
            }
            Layer::Linear { weights, bias } => linear(input, &weights.value, &bias.value),
        }
    }

    fn backward(&mut self, input: &Tensor, grad_output: &Tensor, accumulate: bool) -> Result<Tensor> {
        match self {
            Layer::Conv {
                weights,
                bias,
                stride,
                padding,
            } => {
                let grads = if accumulate {
                    Some((&mut weights.grad, &mut bias.grad))
                } else {
                    None
                };
                conv2d_backward(input, &weights.value, grad_output, *stride, *padding, grads)
            }
            Layer::Deconv {
                weights,
                bias,
                stride,
                padding,
                output_padding,
            } => {
                let grads = if accumulate {
                    Some((&mut weights.grad, &mut bias.grad))
                } else {
                    None
                };
                deconv2d_backward(
                    input,
                    &weights.value,
                    grad_output,
                    *stride,
                    *padding,
                    *output_padding,
                    grads,
                )
            }
            Layer::Prelu { slopes } => {
                let grads = if accumulate {
                    Some(&mut slopes.grad)
                } else {
                    None
                };
                prelu_backward(input, &slopes.value, grad_output, grads)
            }
            Layer::Flatten => grad_output.reshape(input.shape().to_vec()),
            Layer::Linear { weights, bias } => {
                let grads = if accumulate {
                    Some((&mut weights.grad, &mut bias.grad))
                } else {
                    None
                };
                linear_backward(input, &weights.value, grad_output, grads)
            }
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Deconv { .. } => "deconv",
            Layer::Prelu { .. } => "prelu",
            Layer::Flatten => "flatten",
            Layer::Linear { .. } => "fc",
        }
    }
}

/// Per-layer inputs recorded by [`Sequential::forward_cached`].
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Sequential {
        Sequential { layers }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<(Tensor, Cache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let y = layer.forward(&x)?;
            inputs.push(std::mem::replace(&mut x, y));
        }
        Ok((x, Cache { inputs }))
    }

    /// Forward pass that also records the sign of every PReLU input.
    /// Finite-difference checks compare the signs at perturbed points to
    /// detect when a probe step crosses a kink, where a central difference
    /// stops matching the derivative.
    pub fn forward_with_signs(&self, input: &Tensor) -> Result<(Tensor, Vec<bool>)> {
        let mut x = input.clone();
        let mut signs = Vec::new();
        for layer in &self.layers {
            if matches!(layer, Layer::Prelu { .. }) {
                signs.extend(x.data().iter().map(|&v| v >= 0.0));
            }
            x = layer.forward(&x)?;
        }
        Ok((x, signs))
    }

    /// Walks the chain in reverse, adding parameter gradients when
    /// `accumulate` is set, and returns the gradient with respect to the
    /// original input.
    pub fn backward(&mut self, cache: &Cache, grad_output: &Tensor, accumulate: bool) -> Result<Tensor> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Shape {
                context: "Sequential::backward",
                expected: format!("cache for {} layers", self.layers.len()),
                actual: format!("{} cached inputs", cache.inputs.len()),
            });
        }
        let mut g = grad_output.clone();
        for (layer, input) in self.layers.iter_mut().zip(&cache.inputs).rev() {
            g = layer.backward(input, &g, accumulate)?;
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.named_params_mut().into_iter().map(|(_, p)| p).collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            match layer {
                Layer::Conv { weights, bias, .. }
                | Layer::Deconv { weights, bias, .. }
                | Layer::Linear { weights, bias } => {
                    out.push((format!("{kind}{i}.weights"), &mut *weights));
                    out.push((format!("{kind}{i}.bias"), &mut *bias));
                }
                Layer::Prelu { slopes } => {
                    out.push((format!("{kind}{i}.slopes"), &mut *slopes));
                }
                Layer::Flatten => {}
            }
        }
        out
    }

    /// Parameter tensors in a fixed order, named `kind<index>.<field>`.
    pub fn named_values(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let kind = layer.kind();
            match layer {
                Layer::Conv { weights, bias, .. }
                | Layer::Deconv { weights, bias, .. }
                | Layer::Linear { weights, bias } => {
                    out.push((format!("{kind}{i}.weights"), &weights.value));
                    out.push((format!("{kind}{i}.bias"), &bias.value));
                }
                Layer::Prelu { slopes } => {
                    out.push((format!("{kind}{i}.slopes"), &slopes.value));
                }
                Layer::Flatten => {}
            }
        }
        out
    }

    /// Overwrites every parameter from `tensors`, matching by name and shape.
    /// Optimizer state resets to zero. `path` is only used in error messages.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)], path: &Path) -> Result<()> {
        let expected = self.named_params_mut();
        if tensors.len() != expected.len() {
            return Err(Error::CheckpointFormat {
                path: path.to_path_buf(),
                detail: format!(
                    "expected {} parameter tensors, found {}",
                    expected.len(),
                    tensors.len()
                ),
            });
        }
        for (name, param) in expected {
            let found = tensors.iter().find(|(n, _)| *n == name);
            let Some((_, tensor)) = found else {
                return Err(Error::CheckpointFormat {
                    path: path.to_path_buf(),
                    detail: format!("missing parameter tensor {name}"),
                });
            };
            if tensor.shape() != param.value.shape() {
                return Err(Error::CheckpointFormat {
                    path: path.to_path_buf(),
                    detail: format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        tensor.shape(),
                        param.value.shape()
                    ),
                });
            }
            *param = Parameter::new(tensor.clone());
        }
        Ok(())
    }

    /// (weights + biases, PReLU slopes) element counts.
    pub fn param_counts(&self) -> (usize, usize) {
        let mut wb = 0;
        let mut slopes = 0;
        for layer in &self.layers {
            match layer {
                Layer::Conv { weights, bias, .. }
                | Layer::Deconv { weights, bias, .. }
                | Layer::Linear { weights, bias } => {
                    wb += weights.value.len() + bias.value.len();
                }
                Layer::Prelu { slopes: s } => slopes += s.value.len(),
                Layer::Flatten => {}
            }
        }
        (wb, slopes)
    }
}
