//! Super-resolution generator: a four-convolution residual stack that
//! sharpens an image already at target resolution.

use crate::error::Result;
use crate::rng::rng_from;
use crate::tensor::Tensor;

use super::net::{conv_layer, prelu_layer, Cache, Sequential};

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub net: Sequential,
}

pub fn build_generator(rng_seed: u64) -> GeneratorModel {
    let mut rng = rng_from(rng_seed);
    GeneratorModel {
        net: Sequential::new(vec![
            conv_layer(&mut rng, 5, 64, 1, 1, 2),
            prelu_layer(64),
            conv_layer(&mut rng, 3, 64, 64, 1, 1),
            prelu_layer(64),
            conv_layer(&mut rng, 3, 32, 64, 1, 1),
            prelu_layer(32),
            conv_layer(&mut rng, 5, 1, 32, 1, 2),
        ]),
    }
}

impl GeneratorModel {
    /// Unclamped output used during training: `input + residual`.
    pub fn forward(&self, lr_input: &Tensor) -> Result<Tensor> {
        let mut out = self.net.forward(lr_input)?;
        out.add_scaled(lr_input, 1.0);
        Ok(out)
    }

    pub fn forward_cached(&self, lr_input: &Tensor) -> Result<(Tensor, Cache)> {
        let (mut out, cache) = self.net.forward_cached(lr_input)?;
        out.add_scaled(lr_input, 1.0);
        Ok((out, cache))
    }

    /// The skip connection adds the input verbatim, so the output gradient
    /// flows into the residual stack unchanged and also lands directly on
    /// the input gradient.
    pub fn backward(&mut self, cache: &Cache, grad_output: &Tensor) -> Result<Tensor> {
        let mut grad_input = self.net.backward(cache, grad_output, true)?;
        grad_input.add_scaled(grad_output, 1.0);
        Ok(grad_input)
    }

    /// Inference-time output, clamped to the image range.
    pub fn infer(&self, lr_input: &Tensor) -> Result<Tensor> {
        let mut out = self.forward(lr_input)?;
        for v in out.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(out)
    }
}
