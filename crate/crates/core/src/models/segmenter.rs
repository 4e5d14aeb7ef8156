//! Tiny encoder-decoder that scores each pixel as root or background.

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tensor::Tensor;

use super::net::{conv_layer, deconv_layer, prelu_layer, Cache, Sequential};

#[derive(Debug, Clone)]
pub struct SegmenterModel {
    pub net: Sequential,
}

pub fn build_segmenter(rng_seed: u64) -> SegmenterModel {
    let mut rng = rng_from(rng_seed);
    SegmenterModel {
        net: Sequential::new(vec![
            conv_layer(&mut rng, 3, 16, 1, 1, 1),
            prelu_layer(16),
            conv_layer(&mut rng, 3, 32, 16, 2, 1),
            prelu_layer(32),
            conv_layer(&mut rng, 3, 32, 32, 1, 1),
            prelu_layer(32),
            deconv_layer(&mut rng, 4, 16, 32, 2, 1, 0),
            prelu_layer(16),
            conv_layer(&mut rng, 3, 1, 16, 1, 1),
        ]),
    }
}

fn check_even_dims(input: &Tensor) -> Result<()> {
    let (_, _, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidParam(format!(
            "segmenter needs even spatial dims for its stride-2 round trip, got {h}x{w}"
        )));
    }
    Ok(())
}

impl SegmenterModel {
    /// Per-pixel logits with the input's spatial dims.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        check_even_dims(images)?;
        self.net.forward(images)
    }

    pub fn forward_cached(&self, images: &Tensor) -> Result<(Tensor, Cache)> {
        check_even_dims(images)?;
        self.net.forward_cached(images)
    }

    pub fn backward(&mut self, cache: &Cache, grad_output: &Tensor) -> Result<Tensor> {
        self.net.backward(cache, grad_output, true)
    }
}
