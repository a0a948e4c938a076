//! Experiment configuration: a flat text file of `dotted.key = value`
//! lines. `#` starts a comment, lists are comma separated, relative paths
//! resolve against the config file's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::Scheme;
use crate::error::{Error, Result};
use crate::federation::{AlgoConfig, Algorithm, PruneGate};
use crate::nn::zoo::Architecture;
use crate::nn::NoiseScale;

/// Every key the parser accepts.
pub const KNOWN_KEYS: &[&str] = &[
    "dataset.kind",
    "dataset.classes",
    "dataset.per_class",
    "dataset.test_per_class",
    "dataset.dim",
    "dataset.spread",
    "dataset.seed",
    "dataset.train_images",
    "dataset.train_labels",
    "dataset.test_images",
    "dataset.test_labels",
    "dataset.train_csv",
    "dataset.test_csv",
    "dataset.train_limit",
    "dataset.test_limit",
    "model.kind",
    "model.hidden",
    "model.channels",
    "partition.scheme",
    "partition.clients",
    "partition.alpha",
    "partition.seed",
    "algo.name",
    "algo.p",
    "algo.beta",
    "algo.f",
    "algo.d",
    "algo.n",
    "algo.noise_scale",
    "algo.mu",
    "algo.local_epochs",
    "algo.batch_size",
    "algo.participation",
    "algo.lr",
    "algo.momentum",
    "algo.gate",
    "algo.freeze_mask",
    "run.rounds",
    "run.seeds",
    "run.output_dir",
    "output.client_checkpoints",
    "output.embeddings",
    "grid.p",
    "grid.d",
    "grid.n",
    "grid.schemes",
];

const REQUIRED: &[&str] = &[
    "dataset.kind",
    "model.kind",
    "partition.scheme",
    "partition.clients",
    "algo.name",
    "run.rounds",
    "run.seeds",
    "run.output_dir",
];

/// A path as written in the config and as resolved on this machine.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigPath {
    pub written: String,
    pub resolved: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Gaussian blobs; `seed` defaults to the run seed.
    Synth {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        spread: f64,
        seed: Option<u64>,
    },
    Idx {
        train_images: ConfigPath,
        train_labels: ConfigPath,
        test_images: ConfigPath,
        test_labels: ConfigPath,
    },
    Csv {
        train: ConfigPath,
        test: ConfigPath,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Keep only the first `n` training examples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub scheme: Scheme,
    pub clients: usize,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

/// Ablation axes; an empty axis keeps the base value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridAxes {
    pub p: Vec<f64>,
    pub d: Vec<f64>,
    pub n: Vec<f64>,
    pub schemes: Vec<Scheme>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputOptions {
    /// Save every participating client's weights after each round.
    pub client_checkpoints: bool,
    /// Dump penultimate-layer test activations after each round.
    pub embeddings: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: Architecture,
    pub partition: PartitionConfig,
    pub algo: AlgoConfig,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub output: OutputOptions,
    pub grid: GridAxes,
}

struct Entry {
    value: String,
    line: usize,
}

/// Splits the text into `key -> value`, rejecting malformed lines and
/// duplicate keys.
fn parse_lines(text: &str) -> Result<BTreeMap<String, Entry>> {
    let mut out: BTreeMap<String, Entry> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config(format!("line {line}: expected `key = value`, got `{content}`")));
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Config(format!("line {line}: invalid key `{key}`")));
        }
        let value = value.trim().trim_matches('"').to_string();
        if let Some(prev) = out.get(key) {
            return Err(Error::Config(format!(
                "line {line}: duplicate key `{key}` (first set on line {})",
                prev.line
            )));
        }
        out.insert(key.to_string(), Entry { value, line });
    }
    Ok(out)
}

/// Typed access to the parsed entries, collecting every problem instead of
/// stopping at the first.
struct Reader<'a> {
    entries: &'a BTreeMap<String, Entry>,
    base_dir: &'a Path,
    problems: Vec<String>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn complain(&mut self, key: &str, msg: impl Display) {
        let line = self.entries.get(key).map(|e| format!(" (line {})", e.line)).unwrap_or_default();
        self.problems.push(format!("{key}{line}: {msg}"));
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Option<T> {
        let raw = self.raw(key)?.to_string();
        match raw.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.complain(key, format!("cannot parse `{raw}`"));
                None
            }
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> T {
        self.parse(key).unwrap_or(default)
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Option<Vec<T>> {
        let raw = self.raw(key)?.to_string();
        let mut out = Vec::new();
        for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse() {
                Ok(v) => out.push(v),
                Err(_) => {
                    self.complain(key, format!("cannot parse list item `{item}`"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn flag(&mut self, key: &str) -> bool {
        match self.raw(key) {
            None | Some("false") => false,
            Some("true") => true,
            Some(other) => {
                let other = other.to_string();
                self.complain(key, format!("expected true or false, got `{other}`"));
                false
            }
        }
    }

    fn path(&mut self, key: &str) -> ConfigPath {
        let written = self.raw(key).unwrap_or("").to_string();
        if written.is_empty() {
            self.complain(key, "required for this dataset.kind");
        }
        let resolved = self.base_dir.join(&written);
        if !written.is_empty() && !resolved.exists() {
            self.complain(key, format!("{} does not exist", resolved.display()));
        }
        ConfigPath { written, resolved }
    }

    fn scheme(&mut self, key: &str, name: &str, alpha: Option<f64>) -> Option<Scheme> {
        let dirichlet = |overlap| alpha.map(|alpha| Scheme::Dirichlet { alpha, overlap });
        match name {
            "low_cs" => Some(Scheme::LowCs),
            "high_cs" => Some(Scheme::HighCs),
            "dirichlet" => dirichlet(false),
            "dirichlet_overlap" => dirichlet(true),
            other => {
                self.complain(
                    key,
                    format!("unknown scheme `{other}` (dirichlet, dirichlet_overlap, low_cs, high_cs)"),
                );
                None
            }
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses and validates config text; relative paths resolve against
    /// `base_dir`. The error lists every problem found.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let entries = parse_lines(text)?;
        let known: BTreeSet<&str> = KNOWN_KEYS.iter().copied().collect();
        let mut problems: Vec<String> = entries
            .iter()
            .filter(|(k, _)| !known.contains(k.as_str()))
            .map(|(k, e)| format!("line {}: unknown key `{k}`", e.line))
            .collect();
        let missing: Vec<&str> = REQUIRED.iter().copied().filter(|k| !entries.contains_key(*k)).collect();
        if !missing.is_empty() {
            problems.push(format!("missing required keys: {}", missing.join(", ")));
        }

        let mut r = Reader {
            entries: &entries,
            base_dir,
            problems: Vec::new(),
        };

        let source = match r.raw("dataset.kind") {
            Some("synth") | None => DatasetSource::Synth {
                classes: r.get("dataset.classes", 10),
                per_class: r.get("dataset.per_class", 100),
                test_per_class: r.get("dataset.test_per_class", 50),
                dim: r.get("dataset.dim", 16),
                spread: r.get("dataset.spread", 0.5),
                seed: r.parse("dataset.seed"),
            },
            Some("idx") => DatasetSource::Idx {
                train_images: r.path("dataset.train_images"),
                train_labels: r.path("dataset.train_labels"),
                test_images: r.path("dataset.test_images"),
                test_labels: r.path("dataset.test_labels"),
            },
            Some("csv") => DatasetSource::Csv {
                train: r.path("dataset.train_csv"),
                test: r.path("dataset.test_csv"),
            },
            Some(other) => {
                let other = other.to_string();
                r.complain("dataset.kind", format!("unknown dataset kind `{other}` (synth, idx, csv)"));
                DatasetSource::Synth {
                    classes: 1,
                    per_class: 1,
                    test_per_class: 1,
                    dim: 1,
                    spread: 0.0,
                    seed: None,
                }
            }
        };
        if let DatasetSource::Synth {
            classes,
            per_class,
            test_per_class,
            dim,
            spread,
            ..
        } = &source
        {
            if *classes < 1 || *per_class < 1 || *test_per_class < 1 || *dim < 1 {
                r.problems
                    .push("dataset.classes, per_class, test_per_class and dim must be >= 1".into());
            }
            if !(*spread >= 0.0 && spread.is_finite()) {
                r.complain("dataset.spread", "must be >= 0");
            }
        }
        let dataset = DatasetConfig {
            source,
            train_limit: r.parse("dataset.train_limit"),
            test_limit: r.parse("dataset.test_limit"),
        };
        if dataset.train_limit == Some(0) || dataset.test_limit == Some(0) {
            r.problems.push("dataset.train_limit and test_limit must be >= 1".into());
        }

        let model = match r.raw("model.kind") {
            Some("mlp") | None => Architecture::Mlp {
                hidden: r.list("model.hidden").unwrap_or_else(|| vec![256, 128]),
            },
            Some("small_cnn") => {
                let channels: Vec<usize> = r.list("model.channels").unwrap_or_else(|| vec![8, 16]);
                if channels.len() != 2 {
                    r.complain("model.channels", "needs exactly two values");
                }
                Architecture::SmallCnn {
                    channels: [
                        channels.first().copied().unwrap_or(8),
                        channels.get(1).copied().unwrap_or(16),
                    ],
                }
            }
            Some(other) => {
                let other = other.to_string();
                r.complain("model.kind", format!("unknown model `{other}` (mlp, small_cnn)"));
                Architecture::default()
            }
        };
        match &model {
            Architecture::Mlp { hidden } if hidden.contains(&0) => r.complain("model.hidden", "widths must be >= 1"),
            Architecture::SmallCnn { channels } if channels.contains(&0) => {
                r.complain("model.channels", "must be >= 1")
            }
            _ => {}
        }

        let alpha: Option<f64> = r.parse("partition.alpha");
        if let Some(a) = alpha {
            if !(a > 0.0 && a.is_finite()) {
                r.problems.push("partition.alpha must be > 0".into());
            }
        }
        let scheme_name = r.raw("partition.scheme").unwrap_or("low_cs").to_string();
        if scheme_name.starts_with("dirichlet") && alpha.is_none() {
            r.complain("partition.alpha", "required for dirichlet schemes");
        }
        let scheme = r
            .scheme("partition.scheme", &scheme_name, Some(alpha.unwrap_or(1.0)))
            .unwrap_or(Scheme::LowCs);
        let clients: usize = r.get("partition.clients", 1);
        if clients < 1 {
            r.complain("partition.clients", "must be >= 1");
        }
        let partition = PartitionConfig {
            scheme,
            clients,
            seed: r.parse("partition.seed"),
        };

        let algorithm = match r.raw("algo.name") {
            None => Algorithm::FedMpr,
            Some(name) => {
                let name = name.to_string();
                Algorithm::parse(&name).unwrap_or_else(|| {
                    r.complain("algo.name", format!("unknown algorithm `{name}` (fedavg, fedprox, fedmpr)"));
                    Algorithm::FedMpr
                })
            }
        };
        let d = AlgoConfig::default();
        let noise_scale = match r.raw("algo.noise_scale") {
            None | Some("relative") => NoiseScale::Relative,
            Some("absolute") => NoiseScale::Absolute,
            Some(other) => {
                let other = other.to_string();
                r.complain("algo.noise_scale", format!("expected relative or absolute, got `{other}`"));
                NoiseScale::Relative
            }
        };
        let gate = match r.raw("algo.gate") {
            None | Some("density") => PruneGate::Density,
            Some("sparsity") => PruneGate::Sparsity,
            Some(other) => {
                let other = other.to_string();
                r.complain("algo.gate", format!("expected density or sparsity, got `{other}`"));
                PruneGate::Density
            }
        };
        let algo = AlgoConfig {
            algorithm,
            p: r.get("algo.p", d.p),
            beta: r.get("algo.beta", d.beta),
            f: r.get("algo.f", d.f),
            d: r.get("algo.d", d.d),
            n: r.get("algo.n", d.n),
            noise_scale,
            mu: r.get("algo.mu", d.mu),
            local_epochs: r.get("algo.local_epochs", d.local_epochs),
            batch_size: r.get("algo.batch_size", d.batch_size),
            participation: r.get("algo.participation", d.participation),
            lr: r.get("algo.lr", d.lr),
            momentum: r.get("algo.momentum", d.momentum),
            gate,
            freeze_mask: r.flag("algo.freeze_mask"),
        };
        r.problems.extend(algo.problems());

        let rounds: usize = r.get("run.rounds", 1);
        if rounds < 1 {
            r.complain("run.rounds", "must be >= 1");
        }
        let seeds: Vec<u64> = r.list("run.seeds").unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            r.complain("run.seeds", "needs at least one seed");
        }
        let output_dir = base_dir.join(r.raw("run.output_dir").unwrap_or("."));
        let output = OutputOptions {
            client_checkpoints: r.flag("output.client_checkpoints"),
            embeddings: r.flag("output.embeddings"),
        };

        let mut grid = GridAxes {
            p: r.list("grid.p").unwrap_or_default(),
            d: r.list("grid.d").unwrap_or_default(),
            n: r.list("grid.n").unwrap_or_default(),
            schemes: Vec::new(),
        };
        let names: Vec<String> = r.list("grid.schemes").unwrap_or_default();
        for name in names {
            if name.starts_with("dirichlet") && alpha.is_none() {
                r.complain("partition.alpha", "required for dirichlet schemes");
            }
            if let Some(s) = r.scheme("grid.schemes", &name, Some(alpha.unwrap_or(1.0))) {
                grid.schemes.push(s);
            }
        }
        for (key, values, ok) in [
            ("grid.p", &grid.p, (|v: f64| (0.0..1.0).contains(&v)) as fn(f64) -> bool),
            ("grid.d", &grid.d, |v| (0.0..1.0).contains(&v)),
            ("grid.n", &grid.n, |v| v >= 0.0 && v.is_finite()),
        ] {
            if let Some(bad) = values.iter().find(|&&v| !ok(v)) {
                r.complain(key, format!("value {bad} out of range"));
            }
        }

        problems.extend(r.problems);
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        Ok(ExperimentConfig {
            dataset,
            model,
            partition,
            algo,
            rounds,
            seeds,
            output_dir,
            output,
            grid,
        })
    }

    /// Every setting that influences results, one `key = value` per line in
    /// a fixed order. Output locations and grid axes are left out.
    pub fn canonical(&self) -> String {
        let mut kv: Vec<(&str, String)> = Vec::new();
        match &self.dataset.source {
            DatasetSource::Synth {
                classes,
                per_class,
                test_per_class,
                dim,
                spread,
                seed,
            } => {
                kv.push(("dataset.kind", "synth".into()));
                kv.push(("dataset.classes", classes.to_string()));
                kv.push(("dataset.per_class", per_class.to_string()));
                kv.push(("dataset.test_per_class", test_per_class.to_string()));
                kv.push(("dataset.dim", dim.to_string()));
                kv.push(("dataset.spread", spread.to_string()));
                kv.push(("dataset.seed", seed.map(|s| s.to_string()).unwrap_or_default()));
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                kv.push(("dataset.kind", "idx".into()));
                kv.push(("dataset.train_images", train_images.written.clone()));
                kv.push(("dataset.train_labels", train_labels.written.clone()));
                kv.push(("dataset.test_images", test_images.written.clone()));
                kv.push(("dataset.test_labels", test_labels.written.clone()));
            }
            DatasetSource::Csv { train, test } => {
                kv.push(("dataset.kind", "csv".into()));
                kv.push(("dataset.train_csv", train.written.clone()));
                kv.push(("dataset.test_csv", test.written.clone()));
            }
        }
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        kv.push(("dataset.train_limit", opt(self.dataset.train_limit)));
        kv.push(("dataset.test_limit", opt(self.dataset.test_limit)));
        match &self.model {
            Architecture::Mlp { hidden } => {
                kv.push(("model.kind", "mlp".into()));
                kv.push(("model.hidden", join(hidden)));
            }
            Architecture::SmallCnn { channels } => {
                kv.push(("model.kind", "small_cnn".into()));
                kv.push(("model.channels", join(channels)));
            }
        }
        kv.push(("partition.scheme", self.partition.scheme.label()));
        kv.push(("partition.clients", self.partition.clients.to_string()));
        kv.push((
            "partition.seed",
            self.partition.seed.map(|s| s.to_string()).unwrap_or_default(),
        ));
        let a = &self.algo;
        kv.push(("algo.name", a.algorithm.as_str().into()));
        kv.push(("algo.p", a.p.to_string()));
        kv.push(("algo.beta", a.beta.to_string()));
        kv.push(("algo.f", a.f.to_string()));
        kv.push(("algo.d", a.d.to_string()));
        kv.push(("algo.n", a.n.to_string()));
        kv.push(("algo.noise_scale", format!("{:?}", a.noise_scale).to_lowercase()));
        kv.push(("algo.mu", a.mu.to_string()));
        kv.push(("algo.local_epochs", a.local_epochs.to_string()));
        kv.push(("algo.batch_size", a.batch_size.to_string()));
        kv.push(("algo.participation", a.participation.to_string()));
        kv.push(("algo.lr", a.lr.to_string()));
        kv.push(("algo.momentum", a.momentum.to_string()));
        kv.push(("algo.gate", format!("{:?}", a.gate).to_lowercase()));
        kv.push(("algo.freeze_mask", a.freeze_mask.to_string()));
        kv.push(("run.rounds", self.rounds.to_string()));
        kv.push(("run.seeds", join(&self.seeds)));
        kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seed used for partitioning under run seed `seed`.
    pub fn partition_seed(&self, seed: u64) -> u64 {
        self.partition.seed.unwrap_or(seed)
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
