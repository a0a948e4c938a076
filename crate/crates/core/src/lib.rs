//! Deterministic federated-learning simulator with client-side magnitude
//! pruning, dropout and weight-noise regularisation (FedMPR), plus FedAvg and
//! FedProx baselines and covariate-shift partitioners.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod io;
pub mod nn;
pub mod pruning;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
