use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{default_m_grid, default_tau_grid, DecisionMode, DecisionRule};
use crate::features::{FeatureConfig, SplitSpec};
use crate::fedtrain::{FedConfig, LossConfig};
use crate::flat::{from_flat, to_flat};
use crate::telemetry::GeneratorConfig;

/// Operating-point grid for `sweep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub taus: Vec<f64>,
    pub ms: Vec<usize>,
    pub mode: DecisionMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            taus: default_tau_grid(),
            ms: default_m_grid(),
            mode: DecisionMode::Consecutive,
        }
    }
}

/// Every knob of a run. `seed` is the master seed: [`RunConfig::resolved`]
/// copies it into the generator, initializer and client streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub generator: GeneratorConfig,
    pub split: SplitSpec,
    pub features: FeatureConfig,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub fed: FedConfig,
    pub rule: DecisionRule,
    pub sweep: SweepConfig,
}

/// Training stride of the desk-scale default; evaluation uses every window.
pub const DEFAULT_TRAIN_STRIDE: usize = 3;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            output_dir: "runs/default".into(),
            generator: GeneratorConfig::default(),
            split: SplitSpec::default(),
            features: FeatureConfig {
                train_stride: DEFAULT_TRAIN_STRIDE,
                ..FeatureConfig::default()
            },
            encoder: EncoderConfig::default(),
            loss: LossConfig::default(),
            fed: FedConfig::default(),
            rule: DecisionRule::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        from_flat(text)
    }

    pub fn to_text(&self) -> Result<String> {
        to_flat(self)
    }

    /// Copy with the master seed pushed into every seeded component.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.generator.seed = self.seed;
        c.encoder.init_seed = self.seed;
        c.fed.seed = self.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.split.validate()?;
        self.features.validate()?;
        self.encoder.validate()?;
        self.loss.validate()?;
        self.fed.validate()?;
        self.rule.validate()?;
        if self.sweep.taus.is_empty() || self.sweep.ms.is_empty() {
            return Err(Error::Config("sweep grids must be nonempty".into()));
        }
        for &t in &self.sweep.taus {
            DecisionRule { tau: t, ..self.rule }.validate()?;
        }
        if self.sweep.ms.contains(&0) {
            return Err(Error::Config("sweep.ms entries must be at least 1".into()));
        }
        Ok(())
    }

    /// Sets one dotted key, e.g. `fed.mu = 0`. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut table = Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, path) = parts.split_last().expect("split yields one part");
        let mut cur = &mut table;
        for p in path {
            cur = match cur.get_mut(*p) {
                Some(Value::Table(t)) => t,
                _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
            };
        }
        let existing = cur
            .get(*last)
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        let mut value = parse_value(raw);
        if let (Value::Float(_), Value::Integer(i)) = (existing, &value) {
            value = Value::Float(*i as f64);
        }
        cur.insert((*last).to_string(), value);
        *self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        Ok(())
    }
}
