//! Frame streams to model inputs: raw, derived and neighbor features,
//! metadata, normalization and leak-safe windows.

mod build;
mod io;
mod stats;

pub use build::{
    base_features, build_client, build_clients, derived_features, make_windows, neighbor_column_names,
    node_features, raw_column_names, ClientData, FeatureConfig, FeatureFlags, NodeFeatures,
    WindowSample, ZScore, DERIVED_CHANNELS, F_BASE, F_DERIVED, RAW_NAMES,
};
pub use io::client_to_text;
pub use stats::{
    csi_drift, csi_entropy, derived_stats, entropy_from_counts, histogram, neighbor_stats, pearson,
    pop_std, trailing, DerivedStats, DerivedStatsPlan, LinkChannels, F_NBR, NEIGHBOR_STAT_NAMES,
};

pub use crate::split::{Split, SplitBoundaries, SplitSpec};

#[cfg(test)]
mod tests;
