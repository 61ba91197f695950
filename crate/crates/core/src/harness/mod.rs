//! Synthetic data, partitioning, artifact I/O and experiment driving.

pub mod data;
pub mod experiment;
pub mod metrics;
pub mod plot;
pub mod shard;

pub use crate::aggregation::RoundMetrics;
pub use data::{partition_noniid, synth_dataset, Partition, PartitionError, PartitionPlan};
pub use experiment::{
    build_data, cluster_table, load_config, run_experiment, run_simulation, synthesize,
    write_artifacts, ExperimentError, RunArtifacts,
};
