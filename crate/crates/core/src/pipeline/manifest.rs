use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::artifact::sha256_hex;
use crate::encoder::CHECKPOINT_FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::flat::{from_flat, to_flat};
use crate::telemetry::DATASET_FORMAT_VERSION;
use crate::topology::{GridTopology, TOPOLOGY_VERSION};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatVersions {
    pub crate_version: String,
    pub dataset: u32,
    pub checkpoint: u32,
    pub topology: u32,
}

impl FormatVersions {
    pub fn current() -> Self {
        FormatVersions {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            dataset: DATASET_FORMAT_VERSION,
            checkpoint: CHECKPOINT_FORMAT_VERSION,
            topology: TOPOLOGY_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySnapshot {
    pub sha256: String,
    pub nodes: usize,
    pub edges: usize,
    pub wireless_clients: Vec<usize>,
}

impl TopologySnapshot {
    pub fn of(topo: &GridTopology) -> Self {
        TopologySnapshot {
            sha256: sha256_hex(topo.to_text().as_bytes()),
            nodes: topo.len(),
            edges: topo.edges().count(),
            wireless_clients: topo.wireless_nodes(),
        }
    }
}

/// Written once at the start of a stage, before any of its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub stage: String,
    pub versions: FormatVersions,
    pub config: RunConfig,
    pub topology: TopologySnapshot,
    /// Checksums of the artifacts this stage reads, by role.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// Unix start time of this stage and of every earlier stage found in
    /// the run directory.
    pub started_unix: BTreeMap<String, u64>,
}

pub const MANIFEST_DIR: &str = "manifests";

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(
        stage: &str,
        config: &RunConfig,
        topo: &GridTopology,
        inputs: BTreeMap<String, String>,
        run_dir: &Path,
    ) -> Result<Self> {
        let mut started = BTreeMap::new();
        let dir = run_dir.join(MANIFEST_DIR);
        if dir.is_dir() {
            for entry in fs::read_dir(&dir)? {
                let path = entry?.path();
                if let Ok(m) = RunManifest::read(&path) {
                    if m.stage != stage {
                        if let Some(t) = m.started_unix.get(&m.stage) {
                            started.insert(m.stage.clone(), *t);
                        }
                    }
                }
            }
        }
        started.insert(stage.to_string(), now_unix());
        Ok(RunManifest {
            stage: stage.to_string(),
            versions: FormatVersions::current(),
            config: config.clone(),
            topology: TopologySnapshot::of(topo),
            inputs,
            started_unix: started,
        })
    }

    pub fn path(run_dir: &Path, stage: &str) -> std::path::PathBuf {
        run_dir.join(MANIFEST_DIR).join(format!("{stage}.txt"))
    }

    /// Refuses to replace an existing manifest unless `force` is set.
    pub fn write(&self, run_dir: &Path, force: bool) -> Result<()> {
        let path = Self::path(run_dir, &self.stage);
        if path.exists() && !force {
            return Err(Error::Precondition(format!(
                "{} already exists; pass --force to rerun the {} stage",
                path.display(),
                self.stage
            )));
        }
        fs::create_dir_all(run_dir.join(MANIFEST_DIR))?;
        fs::write(path, to_flat(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        from_flat(&fs::read_to_string(path)?)
    }
}
