use rand::seq::SliceRandom;

use super::config::{AlgoConfig, Algorithm, PruneGate};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{loss_and_backward, Model, OptState, Params};
use crate::pruning::{apply_mask_to_params, prune_weights, sparsity, PruneMask};
use crate::seed::{self, Rng};

/// One participant: its slice of the training set, its local model, mask
/// and optimiser state. The optimiser state persists across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    indices: Vec<usize>,
    pub model: Model,
    pub mask: PruneMask,
    pub opt: OptState,
    seed: u64,
}

/// Outcome of one `local_train` call.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalReport {
    pub id: usize,
    /// Mean training loss over every sample seen this round (NaN if none).
    pub loss: f64,
    /// Training top-1 accuracy over every sample seen this round.
    pub accuracy: f64,
    /// Nonzero fraction of maskable weights after the round.
    pub density: f64,
    pub n_k: usize,
    pub pruned: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EpochStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub seen: usize,
}

impl ClientState {
    /// `model` carries the client's regularisation layers and the initial
    /// weights `w_0`. `run_seed` keys this client's random stream.
    pub fn new(id: usize, indices: Vec<usize>, model: Model, cfg: &AlgoConfig, run_seed: u64) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config(format!("client {id} has no training data")));
        }
        let opt = OptState::new(cfg.lr, cfg.momentum, model.params())?;
        Ok(ClientState {
            id,
            indices,
            mask: PruneMask::all_ones(&model),
            model,
            opt,
            seed: seed::derive(run_seed, &[seed::TAG_CLIENT, id as u64]),
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn n_k(&self) -> usize {
        self.indices.len()
    }

    /// The random stream this client uses in `round`.
    pub fn round_rng(&self, round: usize) -> Rng {
        seed::stream(self.seed, &[round as u64])
    }

    /// Broadcast, local training and (FedMPR) gated pruning for one round.
    pub fn local_train(&mut self, global: &Params, cfg: &AlgoConfig, data: &Dataset, round: usize) -> Result<LocalReport> {
        self.model.params().check_layout(global, "broadcast weights")?;
        let mut weights = global.clone();
        let fedmpr = cfg.algorithm == Algorithm::FedMpr;
        if fedmpr {
            apply_mask_to_params(&mut weights, &self.mask);
        }
        self.model.set_params(weights)?;
        self.model.set_mode(crate::nn::Mode::Training);

        let prox = match cfg.algorithm {
            Algorithm::FedProx if cfg.mu > 0.0 => Some((global, cfg.mu)),
            _ => None,
        };
        let freeze = (fedmpr && cfg.freeze_mask).then_some(&self.mask);
        let mut rng = self.round_rng(round);
        let mut stats = EpochStats::default();
        for _ in 0..cfg.local_epochs {
            let e = train_epoch(
                &mut self.model,
                &mut self.opt,
                data,
                &self.indices,
                cfg.batch_size,
                &mut rng,
                prox,
                freeze,
            )?;
            stats.loss_sum += e.loss_sum;
            stats.correct += e.correct;
            stats.seen += e.seen;
        }

        let mut pruned = false;
        if fedmpr && round.is_multiple_of(cfg.f) {
            let report = sparsity(&self.model);
            let gate_open = match cfg.gate {
                PruneGate::Density => report.density() > cfg.beta,
                PruneGate::Sparsity => report.overall > cfg.beta,
            };
            if gate_open {
                self.mask = prune_weights(&mut self.model, cfg.p)?;
                pruned = true;
            }
        }
        let seen = stats.seen as f64;
        Ok(LocalReport {
            id: self.id,
            loss: stats.loss_sum / seen,
            accuracy: stats.correct as f64 / seen,
            density: sparsity(&self.model).density(),
            n_k: self.n_k(),
            pruned,
        })
    }
}

/// Index of the largest entry in each row; the lowest index wins ties.
pub fn argmax_rows(logits: &crate::Tensor) -> Vec<usize> {
    let c = logits.row_len();
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// One pass over `indices` in shuffled mini-batches. `prox` adds the
/// proximal pull `mu * (w - anchor)`; `freeze` keeps masked weights at zero.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut Model,
    opt: &mut OptState,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
    rng: &mut Rng,
    prox: Option<(&Params, f64)>,
    freeze: Option<&PruneMask>,
) -> Result<EpochStats> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let mut stats = EpochStats::default();
    for chunk in order.chunks(batch_size) {
        let (x, y) = data.batch(chunk);
        let (logits, cache) = model.forward(&x, rng)?;
        let (loss, mut grads) = loss_and_backward(model, &logits, &y, &cache)?;
        stats.loss_sum += loss * chunk.len() as f64;
        stats.correct += argmax_rows(&logits).iter().zip(&y).filter(|(a, b)| a == b).count();
        stats.seen += chunk.len();
        if let Some(mask) = freeze {
            apply_mask_to_params(&mut grads, mask);
        }
        match prox {
            Some((anchor, mu)) => opt.step_proximal(model.params_mut(), &grads, anchor, mu)?,
            None => opt.step(model.params_mut(), &grads)?,
        }
        if let Some(mask) = freeze {
            apply_mask_to_params(model.params_mut(), mask);
        }
    }
    Ok(stats)
}
