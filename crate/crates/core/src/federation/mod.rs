//! Round-based federated training: FedAvg, FedProx and FedMPR clients,
//! participant sampling and sample-weighted aggregation.

mod client;
mod config;
mod server;

pub use client::{argmax_rows, train_epoch, ClientState, EpochStats, LocalReport};
pub use config::{AlgoConfig, Algorithm, PruneGate};
pub use server::{
    aggregate, evaluate, metrics_csv, penultimate_features, sample_participants, RoundRecord, ServerState,
    Simulation, METRICS_HEADER,
};
