//! Position-aware rotation-equivariant convolution and the encoder-decoder backbone.

mod backbone;
mod block;
mod conv;

pub use backbone::{
    backbone_forward, backbone_forward_on, backbone_forward_traced, initial_features, BackboneConfig, BackboneParams,
    FeaturePyramid, Pyramid, Trace, INPUT_CHANNELS,
};
pub use block::{nearest_upsample, pare_resblock, strided_block, BlockShape, ResBlock, VnBlock};
pub use conv::{
    correlation_scores, correlation_scores_batch, pare_conv, spatial_stats, ConvLayer, ConvMode, CorrelationNet,
    KernelBank,
};
