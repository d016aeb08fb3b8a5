use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rule::{decide_sequence, decide_timesteps, exact_match, DecisionRule};
use crate::error::{Error, Result};

/// Binary confusion counts with the attack class as positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn add(&mut self, pred: u8, truth: u8) {
        match (pred, truth) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2 TP / (2 TP + FP + FN)`, zero when undefined.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// The same counts with the normal class as positive.
    pub fn flipped(&self) -> Confusion {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

/// Rates derived from the counts of one section.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub timestep_accuracy: f64,
    pub timestep_precision_attack: f64,
    pub timestep_recall_attack: f64,
    pub timestep_f1_attack: f64,
    pub timestep_precision_normal: f64,
    pub timestep_recall_normal: f64,
    pub timestep_f1_normal: f64,
    pub sequence_accuracy: f64,
    pub sequence_fpr: f64,
    pub sequence_precision: f64,
    pub sequence_recall: f64,
    pub sequence_f1: f64,
    pub exact_match_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionMetrics {
    pub windows: u64,
    pub timestep: Confusion,
    pub sequence: Confusion,
    pub exact_matches: u64,
    pub rates: Rates,
}

impl SectionMetrics {
    fn merge(&mut self, other: &SectionMetrics) {
        self.windows += other.windows;
        self.timestep.merge(&other.timestep);
        self.sequence.merge(&other.sequence);
        self.exact_matches += other.exact_matches;
    }

    pub fn derive_rates(&self) -> Rates {
        let (t, s) = (&self.timestep, &self.sequence);
        let normal = t.flipped();
        Rates {
            timestep_accuracy: t.accuracy(),
            timestep_precision_attack: t.precision(),
            timestep_recall_attack: t.recall(),
            timestep_f1_attack: t.f1(),
            timestep_precision_normal: normal.precision(),
            timestep_recall_normal: normal.recall(),
            timestep_f1_normal: normal.f1(),
            sequence_accuracy: s.accuracy(),
            sequence_fpr: s.fpr(),
            sequence_precision: s.precision(),
            sequence_recall: s.recall(),
            sequence_f1: s.f1(),
            exact_match_rate: ratio(self.exact_matches, self.windows),
        }
    }

    fn finish(mut self) -> Self {
        self.rates = self.derive_rates();
        self
    }
}

/// Cached model output for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPrediction {
    pub client: usize,
    pub start: usize,
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
}

impl WindowPrediction {
    /// Window ground truth: any attacked timestep.
    pub fn seq_label(&self) -> u8 {
        u8::from(self.labels.contains(&1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub rule: DecisionRule,
    pub global: SectionMetrics,
    /// Keyed `node_XX`.
    pub clients: BTreeMap<String, SectionMetrics>,
}

pub(crate) fn client_key(client: usize) -> String {
    format!("node_{client:02}")
}

/// Metrics over all windows and per client. Client sections partition the
/// global counts.
pub fn compute_metrics(preds: &[WindowPrediction], rule: &DecisionRule) -> Result<MetricsReport> {
    rule.validate()?;
    if preds.is_empty() {
        return Err(Error::Precondition("no windows to evaluate".into()));
    }
    let mut clients: BTreeMap<usize, SectionMetrics> = BTreeMap::new();
    for p in preds {
        if p.probs.len() != p.labels.len() || p.probs.is_empty() {
            return Err(Error::Shape(format!(
                "window at node {} step {}: {} probabilities, {} labels",
                p.client,
                p.start,
                p.probs.len(),
                p.labels.len()
            )));
        }
        let yhat = decide_timesteps(&p.probs, rule.tau);
        let sec = clients.entry(p.client).or_default();
        sec.windows += 1;
        for (&a, &b) in yhat.iter().zip(&p.labels) {
            sec.timestep.add(a, b);
        }
        sec.sequence
            .add(decide_sequence(&yhat, rule.m, rule.mode), p.seq_label());
        sec.exact_matches += u64::from(exact_match(&yhat, &p.labels));
    }
    let mut global = SectionMetrics::default();
    for sec in clients.values() {
        global.merge(sec);
    }
    Ok(MetricsReport {
        rule: *rule,
        global: global.finish(),
        clients: clients
            .into_iter()
            .map(|(c, s)| (client_key(c), s.finish()))
            .collect(),
    })
}
