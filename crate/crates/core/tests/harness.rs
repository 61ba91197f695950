mod common;

use std::time::Instant;

use orbitfl::domain::ModelKind;
use orbitfl::harness::{run_experiment, synthesize};
use orbitfl::ExperimentConfig;

#[test]
fn default_separation_is_learnable_centrally() {
    let cfg = ExperimentConfig {
        model: ModelKind::Logistic,
        ..ExperimentConfig::default()
    };
    let acc = common::centralized_accuracy(&cfg, 50);
    assert!(acc >= 0.95, "{acc}");
}

#[test]
fn synthesis_is_seed_deterministic() {
    let cfg = ExperimentConfig::default();
    assert_eq!(synthesize(&cfg).unwrap(), synthesize(&cfg).unwrap());
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(
        synthesize(&cfg).unwrap().data,
        synthesize(&other).unwrap().data
    );
}

#[test]
fn default_run_within_a_minute() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let run = run_experiment(&ExperimentConfig::default(), dir.path()).unwrap();
    assert_eq!(run.rows.len(), 200);
    assert!(start.elapsed().as_secs_f64() < 60.0);
    for f in [
        "metrics.csv",
        "events.csv",
        "clusters.csv",
        "config.txt",
        "accuracy.svg",
        "loss.svg",
        "energy.svg",
        "bytes.svg",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let resolved = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert_eq!(
        ExperimentConfig::parse(&resolved).unwrap(),
        ExperimentConfig::default()
    );
}
