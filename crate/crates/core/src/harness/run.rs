use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig};
use crate::checkpoint;
use crate::data::{load_csv, load_idx, partition, synth_blobs, Dataset, Partition, Scheme};
use crate::error::{Error, Result};
use crate::federation::{evaluate, metrics_csv, penultimate_features, Algorithm, Simulation};
use crate::io::write_atomic;
use crate::nn::zoo::Regularization;
use crate::nn::Model;
use crate::seed;

/// Final numbers of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub final_density: f64,
    /// Directory holding this seed's artifacts, relative to the run directory.
    pub dir: String,
}

/// Summary of a multi-seed experiment, written as `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub algorithm: String,
    pub scheme: String,
    pub rounds: usize,
    pub seeds: Vec<SeedResult>,
    pub mean_accuracy: f64,
    /// Sample standard deviation (n - 1); 0 for a single seed.
    pub std_accuracy: f64,
    pub wall_clock_secs: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn truncate(ds: Dataset, limit: Option<usize>) -> Result<Dataset> {
    match limit {
        Some(n) if n < ds.len() => ds.subset(&(0..n).collect::<Vec<_>>()),
        _ => Ok(ds),
    }
}

/// Train and test sets for run seed `seed`, shaped for the configured model.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = match &cfg.dataset.source {
        DatasetSource::Synth {
            classes,
            per_class,
            test_per_class,
            dim,
            spread,
            seed: data_seed,
        } => {
            let s = data_seed.unwrap_or(seed);
            (
                synth_blobs(*classes, *per_class, *dim, *spread, s),
                synth_blobs(*classes, *test_per_class, *dim, *spread, seed::derive(s, &[seed::TAG_DATA])),
            )
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            load_idx(&train_images.resolved, &train_labels.resolved)?,
            load_idx(&test_images.resolved, &test_labels.resolved)?,
        ),
        DatasetSource::Csv { train, test } => (load_csv(&train.resolved)?, load_csv(&test.resolved)?),
    };
    if train.num_classes() != test.num_classes() || train.sample_shape() != test.sample_shape() {
        return Err(Error::Config(format!(
            "train ({} classes, samples {:?}) and test ({} classes, samples {:?}) sets disagree",
            train.num_classes(),
            train.sample_shape(),
            test.num_classes(),
            test.sample_shape()
        )));
    }
    let shape = cfg.model.model_input_shape(train.sample_shape());
    let train = truncate(train, cfg.dataset.train_limit)?.reshape_samples(&shape)?;
    let test = truncate(test, cfg.dataset.test_limit)?.reshape_samples(&shape)?;
    Ok((train, test))
}

pub fn build_partition(cfg: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<Partition> {
    partition(train, cfg.partition.clients, cfg.partition.scheme, cfg.partition_seed(seed))
}

fn seed_dir_name(seed: u64) -> String {
    format!("seed-{seed}")
}

fn incomplete(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".incomplete");
    path.with_file_name(name)
}

fn embeddings_csv(model: &Model, test: &Dataset) -> Result<String> {
    let f = penultimate_features(model, test)?;
    let mut out = String::from("label");
    for j in 0..f.row_len() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (i, label) in test.labels().iter().enumerate() {
        out.push_str(&label.to_string());
        for v in f.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// One seed end to end. Artifacts are written under `<dir>.incomplete`,
/// which is renamed to `dir` only once everything succeeded.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedResult> {
    let work = incomplete(dir);
    if work.exists() {
        fs::remove_dir_all(&work).map_err(|e| Error::io(&work, e))?;
    }
    fs::create_dir_all(&work).map_err(|e| Error::io(&work, e))?;

    let (train, test) = load_data(cfg, seed)?;
    let part = build_partition(cfg, &train, seed)?;
    part.save(&work.join("partition.json"))?;
    let mut sim = Simulation::new(&cfg.model, &train, &test, &part, cfg.algo.clone(), seed)?;
    for _ in 0..cfg.rounds {
        let round = sim.run_round()?.round;
        if cfg.output.client_checkpoints {
            let ids: Vec<usize> = sim.server.history.last().expect("round ran").clients.iter().map(|c| c.id).collect();
            for id in ids {
                let path = work.join(format!("clients/round-{round:03}/client-{id:03}.fmpr"));
                checkpoint::save(&path, sim.clients[id].model.params())?;
            }
        }
        if cfg.output.embeddings {
            let csv = embeddings_csv(&sim.server.global, &test)?;
            write_atomic(&work.join(format!("embeddings/round-{round:03}.csv")), csv.as_bytes())?;
        }
    }
    write_atomic(&work.join("metrics.csv"), metrics_csv(&sim.server.history).as_bytes())?;
    checkpoint::save(&work.join("model.fmpr"), sim.server.global.params())?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&work, dir).map_err(|e| Error::io(dir, e))?;
    let last = sim.server.history.last().expect("rounds >= 1");
    Ok(SeedResult {
        seed,
        final_accuracy: last.test_accuracy,
        final_loss: last.test_loss,
        final_density: last.mean_density,
        dir: dir.file_name().unwrap_or_default().to_string_lossy().into_owned(),
    })
}

/// Runs every seed into `cfg.output_dir/seed-<s>` and writes `result.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    let start = Instant::now();
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &s in &cfg.seeds {
        seeds.push(run_seed(cfg, s, &cfg.output_dir.join(seed_dir_name(s)))?);
    }
    let accs: Vec<f64> = seeds.iter().map(|s| s.final_accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let result = RunResult {
        config_hash: cfg.hash(),
        algorithm: cfg.algo.algorithm.as_str().into(),
        scheme: cfg.partition.scheme.label(),
        rounds: cfg.rounds,
        seeds,
        mean_accuracy,
        std_accuracy,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&result).expect("result serialises");
    write_atomic(&cfg.output_dir.join("result.json"), json.as_bytes())?;
    Ok(result)
}

/// Row label in the ablation summary for a component combination.
pub fn component_label(p: f64, d: f64, n: f64) -> String {
    if p == 0.4 && d == 0.2 && n == 0.4 {
        return "FedMPR".into();
    }
    let parts: Vec<String> = [("p", p), ("d", d), ("n", n)]
        .iter()
        .filter(|(_, v)| *v != 0.0)
        .map(|(k, v)| format!("({k}={v})"))
        .collect();
    if parts.is_empty() {
        "FL (Baseline)".into()
    } else {
        format!("FL {}", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub p: f64,
    pub d: f64,
    pub n: f64,
    pub scheme: String,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

fn axis(values: &[f64], base: f64) -> Vec<f64> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// The Cartesian product of `grid.p x grid.d x grid.n x grid.schemes`, each
/// cell a FedMPR run with that combination. A failing cell is recorded and
/// the grid moves on. Writes `summary.csv` and `grid.json`.
pub fn ablation_grid(base: &ExperimentConfig) -> Result<Vec<GridCell>> {
    let schemes: Vec<Scheme> = if base.grid.schemes.is_empty() {
        vec![base.partition.scheme]
    } else {
        base.grid.schemes.clone()
    };
    let (ps, ds, ns) = (
        axis(&base.grid.p, base.algo.p),
        axis(&base.grid.d, base.algo.d),
        axis(&base.grid.n, base.algo.n),
    );
    let mut cells = Vec::new();
    for &p in &ps {
        for &d in &ds {
            for &n in &ns {
                for &scheme in &schemes {
                    let mut cfg = base.clone();
                    cfg.algo.algorithm = Algorithm::FedMpr;
                    cfg.algo.p = p;
                    cfg.algo.d = d;
                    cfg.algo.n = n;
                    cfg.partition.scheme = scheme;
                    cfg.grid = Default::default();
                    cfg.output_dir = base
                        .output_dir
                        .join(scheme.label())
                        .join(format!("p{p}_d{d}_n{n}"));
                    let outcome = cfg.algo.validate().and_then(|_| run_experiment(&cfg));
                    let (result, error) = match outcome {
                        Ok(r) => (Some(r), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    cells.push(GridCell {
                        p,
                        d,
                        n,
                        scheme: scheme.label(),
                        result,
                        error,
                    });
                }
            }
        }
    }
    write_atomic(&base.output_dir.join("summary.csv"), grid_summary(&cells, &schemes).as_bytes())?;
    let json = serde_json::to_string_pretty(&cells).expect("grid serialises");
    write_atomic(&base.output_dir.join("grid.json"), json.as_bytes())?;
    Ok(cells)
}

/// One row per component combination, a mean and std column per scheme;
/// failed cells read `FAILED`.
pub fn grid_summary(cells: &[GridCell], schemes: &[Scheme]) -> String {
    let mut out = String::from("components,p,d,n");
    for s in schemes {
        out.push_str(&format!(",{0}_mean,{0}_std", s.label()));
    }
    out.push('\n');
    for row in cells.chunks(schemes.len()) {
        let c = &row[0];
        out.push_str(&format!("\"{}\",{},{},{}", component_label(c.p, c.d, c.n), c.p, c.d, c.n));
        for cell in row {
            match &cell.result {
                Some(r) => out.push_str(&format!(",{},{}", r.mean_accuracy, r.std_accuracy)),
                None => out.push_str(",FAILED,FAILED"),
            }
        }
        out.push('\n');
    }
    out
}

/// Accuracy and loss of a saved global model on the configured test set.
pub fn eval_checkpoint(cfg: &ExperimentConfig, path: &Path, seed: u64) -> Result<(f64, f64)> {
    let (train, test) = load_data(cfg, seed)?;
    let params = checkpoint::load(path)?;
    let layers = cfg.model.layers(train.sample_shape(), train.num_classes(), Regularization::NONE)?;
    let model = Model::with_params(train.sample_shape(), layers, params)?;
    evaluate(&model, &test)
}
