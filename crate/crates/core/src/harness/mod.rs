//! Config-driven experiments: single runs, seed sweeps and ablation grids.

mod config;
mod run;

pub use config::{
    ConfigPath, DatasetConfig, DatasetSource, ExperimentConfig, GridAxes, OutputOptions, PartitionConfig, KNOWN_KEYS,
};
pub use run::{
    ablation_grid, build_partition, component_label, eval_checkpoint, grid_summary, load_data, mean_std,
    run_experiment, run_seed, GridCell, RunResult, SeedResult,
};
