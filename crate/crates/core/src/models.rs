//! The network architectures: the small-input upscaler, the residual
//! generator with its patch discriminator, and the per-pixel segmenter, plus
//! the checkpoint format they are saved in.

mod checkpoint;
mod discriminator;
mod fsrcnn;
mod generator;
mod net;
mod segmenter;

pub use checkpoint::{
    checkpoint_crc32, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta,
    CHECKPOINT_VERSION,
};
pub use discriminator::{build_discriminator, DiscriminatorModel};
pub use fsrcnn::{build_fsrcnn, FsrcnnConfig, FsrcnnModel};
pub use generator::{build_generator, GeneratorModel};
pub use net::{
    conv_layer, deconv_layer, linear_layer, prelu_layer, Cache, Layer, Sequential,
    PRELU_INIT_SLOPE,
};
pub use segmenter::{build_segmenter, SegmenterModel};
