//! Real-vs-generated patch classifier: three stride-2 convolutions and a
//! fully connected head producing one logit per sample.

use crate::error::{Error, Result};
use crate::image::PATCH_SIZE;
use crate::rng::rng_from;
use crate::tensor::Tensor;

use super::net::{conv_layer, linear_layer, prelu_layer, Cache, Layer, Sequential};

#[derive(Debug, Clone)]
pub struct DiscriminatorModel {
    pub net: Sequential,
}

pub fn build_discriminator(rng_seed: u64) -> DiscriminatorModel {
    let mut rng = rng_from(rng_seed);
    let tail = PATCH_SIZE / 8;
    DiscriminatorModel {
        net: Sequential::new(vec![
            conv_layer(&mut rng, 3, 32, 1, 2, 1),
            prelu_layer(32),
            conv_layer(&mut rng, 3, 64, 32, 2, 1),
            prelu_layer(64),
            conv_layer(&mut rng, 3, 128, 64, 2, 1),
            prelu_layer(128),
            Layer::Flatten,
            linear_layer(&mut rng, 128 * tail * tail, 1),
        ]),
    }
}

fn check_patch_dims(input: &Tensor) -> Result<()> {
    let (_, _, h, w) = input.dims4()?;
    if (h, w) != (PATCH_SIZE, PATCH_SIZE) {
        return Err(Error::Shape {
            context: "discriminator input",
            expected: format!("{PATCH_SIZE}x{PATCH_SIZE} patches"),
            actual: format!("{h}x{w}"),
        });
    }
    Ok(())
}

impl DiscriminatorModel {
    /// Classifies a batch of patches; returns `[N, 1]` logits.
    pub fn forward(&self, patches: &Tensor) -> Result<Tensor> {
        check_patch_dims(patches)?;
        self.net.forward(patches)
    }

    pub fn forward_cached(&self, patches: &Tensor) -> Result<(Tensor, Cache)> {
        check_patch_dims(patches)?;
        self.net.forward_cached(patches)
    }

    /// `accumulate = false` propagates the gradient to the input patches
    /// without training the discriminator, for generator updates.
    pub fn backward(&mut self, cache: &Cache, grad_output: &Tensor, accumulate: bool) -> Result<Tensor> {
        self.net.backward(cache, grad_output, accumulate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_of_patches_yields_one_logit_each() {
        let model = build_discriminator(5);
        let x = Tensor::filled([3, 1, 64, 64], 0.5);
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), [3, 1]);
        assert!(y.is_finite());
    }

    #[test]
    fn zero_weights_give_zero_logit() {
        let mut model = build_discriminator(6);
        for p in model.net.params_mut() {
            p.value.fill(0.0);
        }
        let y = model.forward(&Tensor::filled([1, 1, 64, 64], 0.8)).unwrap();
        assert_eq!(y.data(), [0.0]);
    }

    #[test]
    fn rejects_wrong_spatial_dims() {
        let model = build_discriminator(7);
        let err = model.forward(&Tensor::filled([1, 1, 32, 32], 0.5)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
