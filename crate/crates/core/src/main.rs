use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedmpr::harness::{self, ExperimentConfig};
use fedmpr::{Error, Result};

#[derive(Parser)]
#[command(name = "fedmpr", version, about = "Deterministic federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of `run.seeds`.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads for client training (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the partition manifest JSON for the first seed.
    Partition {
        #[command(flatten)]
        common: Common,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment over all seeds.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory, replacing `run.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the ablation grid described by the `grid.*` keys.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved global model on the configured test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the result JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed_override {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition { common, out } => {
            let cfg = load(&common)?;
            let seed = cfg.seeds[0];
            let (train, _) = harness::load_data(&cfg, seed)?;
            let part = harness::build_partition(&cfg, &train, seed)?;
            match out {
                Some(path) => part.save(&path)?,
                None => println!("{}", part.to_json()),
            }
        }
        Command::Run { common, out } => {
            let mut cfg = load(&common)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let r = harness::run_experiment(&cfg)?;
            println!(
                "{} {}: accuracy {:.4} +- {:.4} over {} seed(s) -> {}",
                r.algorithm,
                r.scheme,
                r.mean_accuracy,
                r.std_accuracy,
                r.seeds.len(),
                cfg.output_dir.join("result.json").display()
            );
        }
        Command::Grid { common, out } => {
            let mut cfg = load(&common)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let cells = harness::ablation_grid(&cfg)?;
            let failed = cells.iter().filter(|c| c.error.is_some()).count();
            for c in cells.iter().filter(|c| c.error.is_some()) {
                eprintln!("cell p={} d={} n={} {}: {}", c.p, c.d, c.n, c.scheme, c.error.as_deref().unwrap_or(""));
            }
            println!(
                "{} cells ({failed} failed) -> {}",
                cells.len(),
                cfg.output_dir.join("summary.csv").display()
            );
        }
        Command::Eval { common, checkpoint, out } => {
            let cfg = load(&common)?;
            let (accuracy, loss) = harness::eval_checkpoint(&cfg, &checkpoint, cfg.seeds[0])?;
            let json = serde_json::json!({ "accuracy": accuracy, "loss": loss }).to_string();
            println!("{json}");
            if let Some(path) = out {
                fedmpr::io::write_atomic(&path, json.as_bytes())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
