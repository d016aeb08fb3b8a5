//! Run orchestration: configuration, manifests and the stage functions
//! behind the command line.

mod config;
mod manifest;
mod stages;

pub use config::{RunConfig, SweepConfig, DEFAULT_TRAIN_STRIDE};
pub use manifest::{FormatVersions, RunManifest, TopologySnapshot, MANIFEST_DIR};
pub use stages::{
    ablation_to_tsv, ablation_variants, cmd_ablate, cmd_evaluate, cmd_generate, cmd_report, cmd_sweep,
    cmd_train, evaluate_on, load_checkpoint, load_dataset, predict_split, train_on, AblationRow, RunDirs,
    ABLATION_FILE, REPORT_FILE, ROUND_LOG, SWEEP_FILE, TABLE_FILE,
};
