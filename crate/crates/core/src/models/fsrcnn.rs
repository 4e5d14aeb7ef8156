//! FSRCNN: feature extraction, shrink, mapping, expand, then a single
//! strided deconvolution that performs the upscale.

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tensor::Tensor;

use super::net::{conv_layer, deconv_layer, prelu_layer, Cache, Sequential};

/// Width knobs: `d` feature channels, `s` shrunk channels, `m` mapping
/// layers, `n` upscale factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FsrcnnConfig {
    pub d: usize,
    pub s: usize,
    pub m: usize,
    pub n: usize,
}

impl Default for FsrcnnConfig {
    fn default() -> Self {
        FsrcnnConfig {
            d: 56,
            s: 12,
            m: 4,
            n: 4,
        }
    }
}

impl FsrcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.s == 0 || self.m == 0 || self.n == 0 {
            return Err(Error::InvalidParam(format!(
                "fsrcnn dimensions must be positive, got d={} s={} m={} n={}",
                self.d, self.s, self.m, self.n
            )));
        }
        if self.s >= self.d {
            return Err(Error::InvalidParam(format!(
                "fsrcnn shrink width s={} must be smaller than feature width d={}",
                self.s, self.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FsrcnnModel {
    pub config: FsrcnnConfig,
    pub net: Sequential,
}

/// The deconvolution kernel is fixed at 9. With padding 4 and output padding
/// n−1 the output extent is exactly n times the input extent for every n ≥ 1.
const DECONV_KERNEL: usize = 9;
const DECONV_PADDING: usize = 4;

pub fn build_fsrcnn(config: FsrcnnConfig, rng_seed: u64) -> Result<FsrcnnModel> {
    config.validate()?;
    let FsrcnnConfig { d, s, m, n } = config;
    let mut rng = rng_from(rng_seed);
    let mut layers = vec![
        conv_layer(&mut rng, 5, d, 1, 1, 2),
        prelu_layer(d),
        conv_layer(&mut rng, 1, s, d, 1, 0),
        prelu_layer(s),
    ];
    for _ in 0..m {
        layers.push(conv_layer(&mut rng, 3, s, s, 1, 1));
        layers.push(prelu_layer(s));
    }
    layers.push(conv_layer(&mut rng, 1, d, s, 1, 0));
    layers.push(prelu_layer(d));
    layers.push(deconv_layer(
        &mut rng,
        DECONV_KERNEL,
        1,
        d,
        n,
        DECONV_PADDING,
        n - 1,
    ));
    Ok(FsrcnnModel {
        config,
        net: Sequential::new(layers),
    })
}

impl FsrcnnModel {
    /// Upscales a batch of small images by the configured factor.
    pub fn forward(&self, lr_small: &Tensor) -> Result<Tensor> {
        self.net.forward(lr_small)
    }

    pub fn forward_cached(&self, lr_small: &Tensor) -> Result<(Tensor, Cache)> {
        self.net.forward_cached(lr_small)
    }

    pub fn backward(&mut self, cache: &Cache, grad_output: &Tensor) -> Result<Tensor> {
        self.net.backward(cache, grad_output, true)
    }
}
