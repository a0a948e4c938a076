use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::zoo::Regularization;
use crate::nn::NoiseScale;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    FedAvg,
    FedProx,
    FedMpr,
}

impl Algorithm {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fedavg" => Some(Algorithm::FedAvg),
            "fedprox" => Some(Algorithm::FedProx),
            "fedmpr" => Some(Algorithm::FedMpr),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::FedMpr => "fedmpr",
        }
    }
}

/// When a FedMPR client prunes after local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PruneGate {
    /// Prune while the nonzero fraction exceeds `beta`.
    #[default]
    Density,
    /// Prune while the zero fraction exceeds `beta`.
    Sparsity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    /// Fraction of each weight tensor pruned per prune step.
    pub p: f64,
    pub beta: f64,
    /// Prune only in rounds divisible by `f`.
    pub f: usize,
    pub d: f64,
    pub n: f64,
    pub noise_scale: NoiseScale,
    pub mu: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub participation: f64,
    pub lr: f64,
    pub momentum: f64,
    pub gate: PruneGate,
    /// Keep masked weights at zero during local training.
    pub freeze_mask: bool,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            algorithm: Algorithm::FedMpr,
            p: 0.4,
            beta: 0.6,
            f: 1,
            d: 0.2,
            n: 0.4,
            noise_scale: NoiseScale::Relative,
            mu: 0.01,
            local_epochs: 5,
            batch_size: 128,
            participation: 1.0,
            lr: 2e-2,
            momentum: 0.9,
            gate: PruneGate::Density,
            freeze_mask: false,
        }
    }
}

impl AlgoConfig {
    pub fn fedavg() -> Self {
        AlgoConfig {
            algorithm: Algorithm::FedAvg,
            ..Self::default()
        }
    }

    pub fn fedprox(mu: f64) -> Self {
        AlgoConfig {
            algorithm: Algorithm::FedProx,
            mu,
            ..Self::default()
        }
    }

    pub fn fedmpr() -> Self {
        Self::default()
    }

    /// Regularisation active in client models; only FedMPR trains with
    /// dropout and weight noise.
    pub fn regularization(&self) -> Regularization {
        match self.algorithm {
            Algorithm::FedMpr => Regularization {
                dropout: self.d,
                noise: self.n,
                noise_scale: self.noise_scale,
            },
            _ => Regularization::NONE,
        }
    }

    /// Every violated constraint, as `algo.<field> ...` messages.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                out.push(format!("algo.{msg}"));
            }
        };
        need((0.0..1.0).contains(&self.p), "p must be in [0, 1)");
        need(self.beta > 0.0 && self.beta <= 1.0, "beta must be in (0, 1]");
        need(self.f >= 1, "f must be >= 1");
        need((0.0..1.0).contains(&self.d), "d must be in [0, 1)");
        need(self.n >= 0.0 && self.n.is_finite(), "n must be >= 0");
        need(self.mu >= 0.0 && self.mu.is_finite(), "mu must be >= 0");
        need(self.batch_size >= 1, "batch_size must be >= 1");
        need(
            self.participation > 0.0 && self.participation <= 1.0,
            "participation must be in (0, 1]",
        );
        need(self.lr > 0.0 && self.lr.is_finite(), "lr must be > 0");
        need((0.0..1.0).contains(&self.momentum), "momentum must be in [0, 1)");
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
