use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMode {
    /// A run of at least `m` positive timesteps.
    #[default]
    Consecutive,
    /// At least `m` positive timesteps anywhere in the window.
    Any,
}

impl DecisionMode {
    pub fn label(self) -> &'static str {
        match self {
            DecisionMode::Consecutive => "consecutive",
            DecisionMode::Any => "any",
        }
    }
}

impl fmt::Display for DecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consecutive" => Ok(DecisionMode::Consecutive),
            "any" => Ok(DecisionMode::Any),
            _ => Err(Error::Config(format!("unknown decision mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecisionRule {
    pub tau: f64,
    pub m: usize,
    pub mode: DecisionMode,
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule {
            tau: 0.55,
            m: 2,
            mode: DecisionMode::Consecutive,
        }
    }
}

impl DecisionRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("decision.tau = {} outside (0, 1)", self.tau)));
        }
        if self.m == 0 {
            return Err(Error::Config("decision.m must be at least 1".into()));
        }
        Ok(())
    }

    /// Window decision from per-timestep probabilities.
    pub fn decide(&self, probs: &[f64]) -> u8 {
        decide_sequence(&decide_timesteps(probs, self.tau), self.m, self.mode)
    }
}

/// `1` where `p >= tau`.
pub fn decide_timesteps(probs: &[f64], tau: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= tau)).collect()
}

pub fn decide_sequence(yhat: &[u8], m: usize, mode: DecisionMode) -> u8 {
    let hit = match mode {
        DecisionMode::Any => yhat.iter().filter(|&&y| y == 1).count() >= m,
        DecisionMode::Consecutive => {
            let mut run = 0;
            let mut best = 0;
            for &y in yhat {
                run = if y == 1 { run + 1 } else { 0 };
                best = best.max(run);
            }
            best >= m
        }
    };
    u8::from(hit)
}

pub fn exact_match(yhat: &[u8], y: &[u8]) -> u8 {
    u8::from(yhat == y)
}
