use std::collections::BTreeMap;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::aggregate::aggregate;
use super::client::{local_train, ClientTrainSet, ClientUpdate, FedConfig, TrainMode};
use super::loss::{class_weights, LossConfig};
use crate::encoder::{predict, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, DecisionRule, WindowPrediction};
use crate::features::{ClientData, Split, WindowSample};
use crate::flat::{from_flat, to_flat};

/// Client id used for the single pooled trainer in centralized mode.
pub const POOLED_CLIENT: usize = 999;

/// Windows and class weights held by one trainer.
#[derive(Clone, Debug)]
pub struct ClientSplit {
    pub client: usize,
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub weights: (f64, f64),
}

/// One trainer per wireless client, or a single pooled trainer with
/// global class weights in centralized mode.
pub fn prepare_clients(clients: &[ClientData], mode: TrainMode) -> Result<Vec<ClientSplit>> {
    for c in clients {
        if c.n_windows(Split::Train) == 0 || c.n_windows(Split::Val) == 0 {
            return Err(Error::Precondition(format!(
                "client {} has {} training and {} validation windows; both must be nonzero",
                c.ego,
                c.n_windows(Split::Train),
                c.n_windows(Split::Val)
            )));
        }
    }
    if clients.is_empty() {
        return Err(Error::Precondition("no wireless clients".into()));
    }
    match mode {
        TrainMode::Federated => clients
            .iter()
            .map(|c| {
                let (weights, warning) = class_weights(c.train_labels())?;
                if let Some(w) = warning {
                    warn!("client {}: {w}", c.ego);
                }
                Ok(ClientSplit {
                    client: c.ego,
                    train: c.samples(Split::Train),
                    val: c.samples(Split::Val),
                    weights,
                })
            })
            .collect(),
        TrainMode::Centralized => {
            let labels: Vec<u8> = clients.iter().flat_map(|c| c.train_labels().iter().copied()).collect();
            let (weights, warning) = class_weights(&labels)?;
            if let Some(w) = warning {
                warn!("pooled training set: {w}");
            }
            Ok(vec![ClientSplit {
                client: POOLED_CLIENT,
                train: clients.iter().flat_map(|c| c.samples(Split::Train)).collect(),
                val: clients.iter().flat_map(|c| c.samples(Split::Val)).collect(),
                weights,
            }])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientRoundStats {
    pub n_samples: usize,
    pub steps: usize,
    pub loss_first: f64,
    pub loss_last: f64,
    pub loss_mean: f64,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    pub clipped_steps: usize,
}

impl ClientRoundStats {
    fn from_update(u: &ClientUpdate) -> Self {
        ClientRoundStats {
            n_samples: u.n_samples,
            steps: u.losses.len(),
            loss_first: u.losses[0],
            loss_last: u.losses[u.losses.len() - 1],
            loss_mean: u.losses.iter().sum::<f64>() / u.losses.len() as f64,
            grad_norm_mean: u.grad_norm_mean,
            grad_norm_max: u.grad_norm_max,
            clipped_steps: u.clipped,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSummary {
    pub windows: u64,
    pub sequence_accuracy: f64,
    pub sequence_f1: f64,
    pub sequence_fpr: f64,
    pub timestep_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRecord {
    pub clients: BTreeMap<String, ClientRoundStats>,
    pub validation: ValidationSummary,
    /// Round holding the best validation sequence accuracy so far.
    pub best_round: usize,
    pub best_sequence_accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundLog {
    /// Keyed `round_NN`.
    pub rounds: BTreeMap<String, RoundRecord>,
}

impl RoundLog {
    pub fn records(&self) -> impl Iterator<Item = &RoundRecord> {
        self.rounds.values()
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn to_text(&self) -> Result<String> {
        to_flat(self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        from_flat(text)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best: EncoderParams,
    pub best_round: usize,
    pub final_params: EncoderParams,
    pub log: RoundLog,
}

fn client_label(client: usize) -> String {
    if client == POOLED_CLIENT {
        "pooled".into()
    } else {
        format!("node_{client:02}")
    }
}

/// Eval-mode predictions for windows, tagged with their client.
pub fn predict_windows(
    params: &EncoderParams,
    windows: &[WindowSample],
    batch_size: usize,
) -> Result<Vec<WindowPrediction>> {
    let probs = predict(params, windows, batch_size)?;
    Ok(windows
        .iter()
        .zip(probs)
        .map(|(w, p)| WindowPrediction {
            client: w.ego,
            start: w.start,
            probs: p,
            labels: w.labels.clone(),
        })
        .collect())
}

/// The federated loop: broadcast, local training on every client,
/// weighted aggregation, validation of the new global model. Keeps the
/// round with the best pooled validation sequence accuracy.
pub fn run_rounds(
    init: EncoderParams,
    clients: &[ClientSplit],
    loss: &LossConfig,
    fed: &FedConfig,
    rule: &DecisionRule,
) -> Result<TrainOutcome> {
    loss.validate()?;
    fed.validate()?;
    rule.validate()?;
    if clients.is_empty() {
        return Err(Error::Precondition("no clients to train".into()));
    }
    let val: Vec<WindowSample> = clients.iter().flat_map(|c| c.val.iter().cloned()).collect();
    if val.is_empty() {
        return Err(Error::Precondition("no validation windows".into()));
    }
    let mut global = init;
    let mut best: Option<(EncoderParams, usize, f64)> = None;
    let mut log = RoundLog::default();
    for round in 1..=fed.rounds {
        let started = Instant::now();
        let mut updates = Vec::with_capacity(clients.len());
        for c in clients {
            let data = ClientTrainSet {
                client: c.client,
                train: &c.train,
                weights: c.weights,
            };
            updates.push(local_train(&global, &data, loss, fed, round)?);
        }
        let tensors = aggregate(&updates)?;
        global = EncoderParams::from_tensors(&global.config, global.dims, tensors)?;

        let preds = predict_windows(&global, &val, fed.batch_size)?;
        let m = compute_metrics(&preds, rule)?;
        let acc = m.global.rates.sequence_accuracy;
        if best.as_ref().is_none_or(|b| acc > b.2) {
            best = Some((global.clone(), round, acc));
        }
        let (_, best_round, best_acc) = best.as_ref().expect("set above");
        let record = RoundRecord {
            clients: updates
                .iter()
                .map(|u| (client_label(u.client), ClientRoundStats::from_update(u)))
                .collect(),
            validation: ValidationSummary {
                windows: m.global.windows,
                sequence_accuracy: acc,
                sequence_f1: m.global.rates.sequence_f1,
                sequence_fpr: m.global.rates.sequence_fpr,
                timestep_f1: m.global.rates.timestep_f1_attack,
            },
            best_round: *best_round,
            best_sequence_accuracy: *best_acc,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "round {round}/{}: val seq acc {:.4} f1 {:.4} fpr {:.4} ({:.1}s)",
            fed.rounds,
            acc,
            record.validation.sequence_f1,
            record.validation.sequence_fpr,
            record.wall_seconds
        );
        log.rounds.insert(format!("round_{round:02}"), record);
    }
    let (best, best_round, _) = best.expect("at least one round");
    Ok(TrainOutcome {
        best,
        best_round,
        final_params: global,
        log,
    })
}
