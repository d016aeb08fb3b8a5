use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{supervised_loss, LossConfig};
use super::optim::{clip_global_norm, Adam};
use crate::encoder::{forward, Batch, EncoderParams};
use crate::error::{Error, Result};
use crate::features::WindowSample;
use crate::numerics::{Graph, Mode, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Federated,
    /// One trainer on the pooled windows of every client.
    Centralized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    /// Proximal coefficient; zero gives FedAvg.
    pub mu: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub fraction: f64,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 10,
            local_epochs: 1,
            mu: 0.01,
            lr: 1e-3,
            batch_size: 64,
            fraction: 1.0,
            seed: 7,
            mode: TrainMode::Federated,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "fed.rounds, fed.local_epochs and fed.batch_size must be positive".into(),
            ));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::Config("fed.mu must be non-negative".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("fed.lr must be a non-negative number".into()));
        }
        if self.fraction != 1.0 {
            return Err(Error::Config(
                "fed.fraction must be 1.0; partial participation is not supported".into(),
            ));
        }
        Ok(())
    }
}

/// One client's training windows and class weights.
pub struct ClientTrainSet<'a> {
    pub client: usize,
    pub train: &'a [WindowSample],
    pub weights: (f64, f64),
}

/// What a client sends back to the server.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    pub params: Vec<Tensor>,
    pub n_samples: usize,
    /// Supervised loss of every minibatch, in order.
    pub losses: Vec<f64>,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    /// Steps where clipping was active.
    pub clipped: usize,
}

/// Objective value and its full gradient for one minibatch at `params`.
pub struct StepGradient {
    pub supervised: f64,
    pub objective: f64,
    pub grads: Vec<Tensor>,
}

/// Gradient of `L_sup + lambda_wd |theta|^2 + (mu / 2) |theta - theta_g|^2`.
pub fn objective_gradient(
    params: &EncoderParams,
    global: Option<&[Tensor]>,
    mu: f64,
    batch: &Batch,
    loss: &LossConfig,
    weights: (f64, f64),
    mode: Mode,
) -> Result<StepGradient> {
    let mut g = Graph::new(params.tensors(), mode);
    let f = forward(&mut g, params, batch)?;
    let terms = supervised_loss(&mut g, f.probs, batch, loss, weights)?;
    let sup = g.value(terms.total).data()[0];
    if !sup.is_finite() {
        return Err(Error::NonFinite("supervised loss".into()));
    }
    let raw = g.backward(terms.total)?.into_params();
    let mut objective = sup;
    let mut grads = Vec::with_capacity(raw.len());
    for (i, (theta, gr)) in params.tensors().iter().zip(raw).enumerate() {
        let mut gr = gr.unwrap_or_else(|| Tensor::zeros(theta.shape()));
        if loss.weight_decay > 0.0 {
            gr.axpy(2.0 * loss.weight_decay, theta);
            objective += loss.weight_decay * theta.sq_norm();
        }
        if let Some(gl) = global {
            if mu > 0.0 {
                let mut diff = theta.clone();
                diff.axpy(-1.0, &gl[i]);
                gr.axpy(mu, &diff);
                objective += 0.5 * mu * diff.sq_norm();
            }
        }
        grads.push(gr);
    }
    Ok(StepGradient {
        supervised: sup,
        objective,
        grads,
    })
}

/// Stream of the shuffling and dropout generator for one client in one
/// round.
pub fn client_rng(seed: u64, round: usize, client: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 32) | client as u64);
    rng
}

/// `E` epochs of clipped Adam on the FedProx objective, starting from the
/// broadcast parameters with a fresh optimizer.
pub fn local_train(
    global: &EncoderParams,
    data: &ClientTrainSet<'_>,
    loss: &LossConfig,
    fed: &FedConfig,
    round: usize,
) -> Result<ClientUpdate> {
    if data.train.is_empty() {
        return Err(Error::Precondition(format!(
            "client {} has no training windows",
            data.client
        )));
    }
    let mut params = global.clone();
    let mut opt = Adam::new(fed.lr, params.tensors());
    let mut rng = client_rng(fed.seed, round, data.client);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut losses = Vec::new();
    let (mut norm_sum, mut norm_max, mut clipped) = (0.0, 0.0f64, 0);
    for _ in 0..fed.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(fed.batch_size) {
            let samples: Vec<&WindowSample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let batch = Batch::new(&samples, &params.dims)?;
            let mode = Mode::Train { seed: rng.random() };
            let mut step = objective_gradient(
                &params,
                Some(global.tensors()),
                fed.mu,
                &batch,
                loss,
                data.weights,
                mode,
            )
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!(
                    "{what} (client {}, round {round}, step {})",
                    data.client,
                    losses.len()
                )),
                other => other,
            })?;
            let norm = clip_global_norm(&mut step.grads, loss.clip_norm);
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient norm (client {}, round {round}, step {})",
                    data.client,
                    losses.len()
                )));
            }
            norm_sum += norm;
            norm_max = norm_max.max(norm);
            clipped += usize::from(norm > loss.clip_norm);
            opt.update(params.tensors_mut(), &step.grads);
            losses.push(step.supervised);
        }
    }
    Ok(ClientUpdate {
        client: data.client,
        params: params.into_tensors(),
        n_samples: data.train.len(),
        grad_norm_mean: norm_sum / losses.len() as f64,
        grad_norm_max: norm_max,
        clipped,
        losses,
    })
}
