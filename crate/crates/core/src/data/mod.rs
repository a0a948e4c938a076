//! Datasets, loaders and client partitioners.

mod csv;
mod dataset;
pub mod idx;
pub mod partition;
mod synth;

pub use self::csv::load_csv;
pub use dataset::Dataset;
pub use idx::load_idx;
pub use partition::{
    dirichlet_partition, high_cs_partition, low_cs_partition, partition, Partition, Scheme,
};
pub use synth::{blob_centers, synth_blobs};
