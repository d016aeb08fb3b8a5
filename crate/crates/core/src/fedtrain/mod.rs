//! Local supervised training and the federated round loop.

mod aggregate;
mod client;
mod loss;
mod optim;
mod rounds;

pub use aggregate::{aggregate, exact_weighted_mean};
pub use client::{
    client_rng, local_train, objective_gradient, ClientTrainSet, ClientUpdate, FedConfig, StepGradient,
    TrainMode,
};
pub use loss::{
    class_weights, sequence_loss, supervised_loss, timestep_loss, topk_indices, topk_pool, LossConfig,
    LossTerms,
};
pub use optim::{clip_global_norm, global_norm, Adam};
pub use rounds::{
    predict_windows, prepare_clients, run_rounds, ClientRoundStats, ClientSplit, RoundLog, RoundRecord,
    TrainOutcome, ValidationSummary, POOLED_CLIENT,
};
