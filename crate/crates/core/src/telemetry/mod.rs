//! Synthetic physical-layer and behavioral telemetry with injected passive
//! attacks.

mod config;
mod formulas;
mod generate;
mod io;
mod schedule;

pub use config::{AttackConfig, BenignConfig, GeneratorConfig, TechProfile, TechProfiles};
pub use formulas::{per_from_ber, phase_drift, snr_db};
pub use generate::{simulate, wrap_phase, ChannelState, Dataset, NodeSeries, TelemetryFrame};
pub use io::{
    dataset_checksum, frame_header, node_file, read_dataset, read_manifest, series_from_text,
    series_to_text, write_dataset, DatasetManifest, DATASET_FORMAT_VERSION, MANIFEST_FILE,
};
pub use schedule::{
    schedule_attacks, schedule_benign, AttackSchedule, AttackWindow, BenignEvent, BenignKind,
};
