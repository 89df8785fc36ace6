//! Feature backbone, MotionNet regression heads and the two-layer network.

mod backbone;
mod checkpoint;
mod motion;
mod network;

pub use backbone::{
    Backbone, BackboneKind, BackboneOutput, F1_SIZE, F2_SIZE, IMAGENET_MEAN, IMAGENET_STD, INPUT_SIZE,
    TEST_PYRAMID_SEED,
};
pub use checkpoint::{code_version, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use motion::{MotionNet, MotionNetConfig, MotionTrace, Variant, IDENTITY_BIAS};
pub use network::{ForwardTrace, NetworkConfig, PairInput, RprNetwork, TapeEstimate, TwoLayerEstimate};
