//! Config-driven runs and their on-disk artifacts.

use std::path::{Path, PathBuf};

use thiserror::Error;

use super::data::{partition_noniid, synth_dataset, Partition, PartitionError, PartitionPlan};
use super::metrics::{clusters_csv, events_csv, metrics_csv, write_atomic};
use super::plot::emit_plots;
use super::shard::{load_federation, ShardError};
use crate::aggregation::{ClusterLogRow, RoundMetrics, SimError, Simulation};
use crate::constellation::EventRecord;
use crate::domain::{ConfigError, ExperimentConfig, ModelVector, SeededRng, StreamId};
use crate::learner::{FederatedData, GridShape};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Shard(#[from] ShardError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl ExperimentError {
    /// 2 for configuration problems, 3 for I/O, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Partition(_) => 2,
            ExperimentError::Sim(SimError::Config(_) | SimError::Data(_)) => 2,
            ExperimentError::Io { .. } | ExperimentError::Shard(_) => 3,
            ExperimentError::Sim(_) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a config file and applies `key=value` overrides in order.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    for o in overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg.validate()?)
}

pub fn grid_shape(cfg: &ExperimentConfig) -> GridShape {
    GridShape::new(
        cfg.grid_height as usize,
        cfg.grid_width as usize,
        cfg.grid_channels as usize,
    )
}

/// Synthetic dataset and non-IID split driven by the config seed.
pub fn synthesize(cfg: &ExperimentConfig) -> Result<Partition, PartitionError> {
    let shape = grid_shape(cfg);
    let classes = cfg.num_classes as usize;
    let mut data_rng = SeededRng::new(cfg.seed, StreamId::Dataset);
    let dataset = synth_dataset(
        classes,
        cfg.samples_per_class as usize,
        shape,
        cfg.class_separation,
        &mut data_rng,
    );
    let plan = PartitionPlan {
        clients: cfg.num_clients as usize,
        eval_fraction: cfg.eval_fraction,
        labeled_fraction: cfg.labeled_fraction,
        designated_fraction: cfg.designated_fraction,
    };
    let mut part_rng = SeededRng::new(cfg.seed, StreamId::Partitioner);
    partition_noniid(dataset, classes, shape, &plan, &mut part_rng)
}

/// Shards from `data_dir` when set, synthetic data otherwise.
pub fn build_data(cfg: &ExperimentConfig) -> Result<FederatedData, ExperimentError> {
    match &cfg.data_dir {
        Some(dir) => Ok(load_federation(Path::new(dir), cfg.num_clients as usize)?),
        None => Ok(synthesize(cfg)?.data),
    }
}

/// Everything a run emits.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub rows: Vec<RoundMetrics>,
    pub events: Vec<EventRecord>,
    pub clusters: Vec<ClusterLogRow>,
    pub final_model: ModelVector,
}

impl RunArtifacts {
    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.rows)
    }

    pub fn events_csv(&self) -> String {
        events_csv(&self.events)
    }

    pub fn clusters_csv(&self) -> String {
        clusters_csv(&self.clusters)
    }
}

/// Runs `rounds` rounds, stopping early once `stop_at_accuracy` is met.
pub fn run_simulation(sim: &mut Simulation) -> Result<RunArtifacts, SimError> {
    let rounds = sim.config().rounds;
    let stop = sim.config().stop_at_accuracy;
    let mut out = RunArtifacts {
        rows: Vec::with_capacity(rounds as usize),
        events: Vec::new(),
        clusters: Vec::new(),
        final_model: sim.global_model().clone(),
    };
    for _ in 0..rounds {
        let report = sim.run_round()?;
        let accuracy = report.metrics.accuracy;
        out.rows.push(report.metrics);
        out.events.extend(report.events);
        out.clusters.extend(report.clusters);
        if stop.is_some_and(|target| accuracy >= target) {
            break;
        }
    }
    out.final_model = sim.global_model().clone();
    Ok(out)
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const CONFIG_FILE: &str = "config.txt";

/// Writes the CSVs, the resolved config and the plots into `dir`.
pub fn write_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    run: &RunArtifacts,
) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = vec![
        (METRICS_FILE.to_string(), run.metrics_csv()),
        (EVENTS_FILE.to_string(), run.events_csv()),
        (CLUSTERS_FILE.to_string(), run.clusters_csv()),
        (CONFIG_FILE.to_string(), cfg.to_text()),
    ];
    files.extend(emit_plots(&run.rows));
    for (name, text) in files {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Config file in, artifacts out.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<RunArtifacts, ExperimentError> {
    let data = build_data(cfg)?;
    let mut sim = Simulation::new(cfg.clone(), data)?;
    let run = run_simulation(&mut sim)?;
    write_artifacts(out_dir, cfg, &run)?;
    Ok(run)
}

/// `client_id,cluster,is_ps` for every client.
pub fn cluster_table(sim: &Simulation) -> String {
    let a = sim.assignment();
    let mut out = String::from("client_id,cluster,is_ps\n");
    for (id, label) in a.labels.iter().enumerate() {
        out.push_str(&format!("{id},{label},{}\n", u8::from(a.is_ps(id as u32))));
    }
    out
}
