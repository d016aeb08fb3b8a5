//! Synthetic smart-grid telemetry, a star-subgraph GCN + BiGRU detector, and a
//! FedProx training loop for passive-eavesdropping detection.

pub mod artifact;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod fedtrain;
pub mod flat;
pub mod numerics;
pub mod pipeline;
pub mod split;
pub mod telemetry;
pub mod topology;

pub use error::{Error, Result};
