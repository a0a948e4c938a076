use rayon::prelude::*;

use super::client::{argmax_rows, ClientState, LocalReport};
use super::config::AlgoConfig;
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::nn::zoo::{Architecture, Regularization};
use crate::nn::{softmax_xent, Model, Params};
use crate::seed;
use crate::tensor::Tensor;

/// Metrics of one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub mean_client_loss: f64,
    pub mean_density: f64,
    /// Participating clients in ascending id order.
    pub clients: Vec<LocalReport>,
}

impl RoundRecord {
    pub fn participants_n(&self) -> usize {
        self.clients.iter().map(|c| c.n_k).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: Model,
    pub round: usize,
    pub history: Vec<RoundRecord>,
}

/// Sample-weighted mean `sum_k n_k / n * w_k` of client parameters,
/// accumulated in ascending client id order whatever the input order.
pub fn aggregate(updates: &[(usize, &Params, usize)]) -> Result<Params> {
    let mut sorted: Vec<&(usize, &Params, usize)> = updates.iter().collect();
    sorted.sort_by_key(|u| u.0);
    let Some(first) = sorted.first() else {
        return Err(Error::Protocol("aggregate needs at least one client".into()));
    };
    if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Protocol(format!("client {} reported twice", w[0].0)));
    }
    if let Some(u) = sorted.iter().find(|u| u.2 == 0) {
        return Err(Error::Protocol(format!("client {} reported n_k = 0", u.0)));
    }
    for u in &sorted[1..] {
        if !u.1.same_layout(first.1) {
            return Err(Error::Protocol(format!(
                "client {} sent parameters with a different layout",
                u.0
            )));
        }
    }
    let total: usize = sorted.iter().map(|u| u.2).sum();
    let coeff: Vec<f64> = sorted.iter().map(|u| u.2 as f64 / total as f64).collect();
    let out = first
        .1
        .iter()
        .map(|(name, t0)| {
            let mut acc: Vec<f64> = t0.data().iter().map(|v| coeff[0] * v).collect();
            for (u, c) in sorted.iter().zip(&coeff).skip(1) {
                let t = u.1.get(name).expect("same layout");
                for (a, v) in acc.iter_mut().zip(t.data()) {
                    *a += c * v;
                }
            }
            (name.clone(), Tensor::new(t0.shape().to_vec(), acc).expect("same shape"))
        })
        .collect();
    Ok(out)
}

/// `ceil(participation * K)` distinct clients in ascending id order,
/// determined by `(seed, round)`.
pub fn sample_participants(num_clients: usize, participation: f64, seed: u64, round: usize) -> Vec<usize> {
    if participation >= 1.0 || num_clients == 0 {
        return (0..num_clients).collect();
    }
    let want = ((participation * num_clients as f64) - 1e-9).ceil().clamp(1.0, num_clients as f64) as usize;
    let mut rng = seed::stream(seed, &[seed::TAG_SAMPLE, round as u64]);
    let mut picked = rand::seq::index::sample(&mut rng, num_clients, want).into_vec();
    picked.sort_unstable();
    picked
}

const EVAL_BATCH: usize = 512;

/// Top-1 accuracy and mean cross-entropy with regularisation disabled.
pub fn evaluate(model: &Model, test: &Dataset) -> Result<(f64, f64)> {
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let all: Vec<usize> = (0..test.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let (x, y) = test.batch(chunk);
        let logits = model.infer(&x)?;
        loss_sum += softmax_xent(&logits, &y)?.0 * chunk.len() as f64;
        correct += argmax_rows(&logits).iter().zip(&y).filter(|(a, b)| a == b).count();
    }
    let n = test.len() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}

/// Inputs to the final dense layer for every test sample, in order.
pub fn penultimate_features(model: &Model, test: &Dataset) -> Result<Tensor> {
    let all: Vec<usize> = (0..test.len()).collect();
    let mut data = Vec::new();
    let mut width = 0;
    for chunk in all.chunks(EVAL_BATCH) {
        let (x, _) = test.batch(chunk);
        let f = model.infer_features(&x)?;
        width = f.row_len();
        data.extend_from_slice(f.data());
    }
    Tensor::new(vec![test.len(), width], data)
}

/// A full federation: server, clients and the data they train on.
#[derive(Debug)]
pub struct Simulation<'a> {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub cfg: AlgoConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    seed: u64,
    /// Run clients on the rayon pool instead of one after another.
    pub parallel: bool,
}

impl<'a> Simulation<'a> {
    /// Initialises `w_0` from `seed` and hands every client a copy.
    pub fn new(
        arch: &Architecture,
        train: &'a Dataset,
        test: &'a Dataset,
        partition: &Partition,
        cfg: AlgoConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = seed::stream(seed, &[seed::TAG_INIT]);
        let global = arch.build(train.sample_shape(), train.num_classes(), Regularization::NONE, &mut init_rng)?;
        let layers = arch.layers(train.sample_shape(), train.num_classes(), cfg.regularization())?;
        let mut clients = Vec::with_capacity(partition.num_clients());
        for (id, indices) in partition.assignments.iter().enumerate() {
            if let Some(&bad) = indices.iter().find(|&&i| i >= train.len()) {
                return Err(Error::Config(format!("client {id}: index {bad} outside training set")));
            }
            let model = Model::with_params(global.input_shape(), layers.clone(), global.params().clone())?;
            clients.push(ClientState::new(id, indices.clone(), model, &cfg, seed)?);
        }
        if clients.is_empty() {
            return Err(Error::Config("federation needs at least one client".into()));
        }
        Ok(Simulation {
            server: ServerState {
                global,
                round: 0,
                history: Vec::new(),
            },
            clients,
            cfg,
            train,
            test,
            seed,
            parallel: true,
        })
    }

    pub fn run(&mut self, rounds: usize) -> Result<()> {
        for _ in 0..rounds {
            self.run_round()?;
        }
        Ok(())
    }

    /// Broadcast, local training of the sampled clients, aggregation and
    /// evaluation of the new global model.
    pub fn run_round(&mut self) -> Result<&RoundRecord> {
        let round = self.server.round + 1;
        let participants = sample_participants(self.clients.len(), self.cfg.participation, self.seed, round);
        let global = self.server.global.params().clone();
        let (cfg, train) = (&self.cfg, self.train);
        let selected: Vec<&mut ClientState> = {
            let mut wanted = participants.iter().peekable();
            self.clients
                .iter_mut()
                .filter(|c| {
                    if wanted.peek() == Some(&&c.id) {
                        wanted.next();
                        true
                    } else {
                        false
                    }
                })
                .collect()
        };
        let work = |c: &mut ClientState| {
            c.local_train(&global, cfg, train, round).map_err(|e| Error::Client {
                client: c.id,
                source: Box::new(e),
            })
        };
        let results: Vec<Result<LocalReport>> = if self.parallel {
            selected.into_par_iter().map(work).collect()
        } else {
            selected.into_iter().map(work).collect()
        };
        let reports = results.into_iter().collect::<Result<Vec<_>>>()?;

        let updates: Vec<(usize, &Params, usize)> = participants
            .iter()
            .map(|&id| (id, self.clients[id].model.params(), self.clients[id].n_k()))
            .collect();
        let new_global = aggregate(&updates)?;
        if !new_global.is_finite() {
            return Err(Error::Protocol(format!("round {round}: aggregated weights are not finite")));
        }
        self.server.global.set_params(new_global)?;
        let (test_accuracy, test_loss) = evaluate(&self.server.global, self.test)?;
        let k = reports.len() as f64;
        let record = RoundRecord {
            round,
            test_loss,
            test_accuracy,
            mean_client_loss: reports.iter().map(|r| r.loss).sum::<f64>() / k,
            mean_density: reports.iter().map(|r| r.density).sum::<f64>() / k,
            clients: reports,
        };
        self.server.round = round;
        self.server.history.push(record);
        Ok(self.server.history.last().expect("just pushed"))
    }
}

/// Header of the round-metrics CSV.
pub const METRICS_HEADER: &str = "round,client_id,loss,accuracy,density,n_k";

/// One row per participating client, then a `GLOBAL` row with the test
/// loss/accuracy, mean client density and total participating samples.
pub fn metrics_csv(history: &[RoundRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        for c in &r.clients {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.round, c.id, c.loss, c.accuracy, c.density, c.n_k));
        }
        out.push_str(&format!(
            "{},GLOBAL,{},{},{},{}\n",
            r.round,
            r.test_loss,
            r.test_accuracy,
            r.mean_density,
            r.participants_n()
        ));
    }
    out
}
