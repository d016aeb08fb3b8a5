//! Spatiotemporal encoder: per-timestep star-graph convolution, pooling,
//! fusion and a bidirectional GRU producing per-timestep attack
//! probabilities.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{
    read_checkpoint, read_checkpoint_manifest, write_checkpoint, CheckpointManifest, ParamRecord,
    CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MANIFEST, CHECKPOINT_PAYLOAD,
};
pub use forward::{
    build_node_matrix, encode_window, forward, gcn_layer, gcn_normalization, predict, Batch,
    EncoderOutput, Forward,
};
pub use params::{Arch, EncoderConfig, EncoderParams, InputDims};

#[cfg(test)]
mod tests;
