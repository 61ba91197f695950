//! Deterministic desk-scale simulator for hierarchical semi-supervised
//! federated learning over clustered LEO satellite constellations.
//!
//! Satellites hold unlabeled shards and a ground station holds the only
//! labeled data. Each round the ground station trains on its labeled set,
//! elected in-orbit parameter servers relay the model to their clusters,
//! clients train on confident pseudo-labels plus CutMix, and updates travel
//! back sparsified and stochastically quantized. The fastest fraction of
//! every cluster is aggregated with staleness weights, and the ground
//! station merges cluster models. Every round is charged time and energy
//! through a link-budget model.

pub mod aggregation;
pub mod clustering;
pub mod compression;
pub mod constellation;
pub mod domain;
pub mod harness;
pub mod learner;

pub use domain::{ConfigError, ExperimentConfig, ModelVector, SeededRng, StreamId};
