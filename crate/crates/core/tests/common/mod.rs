#![allow(dead_code)]

use orbitfl::domain::{ExperimentConfig, ModelKind, SeededRng, StreamId};
use orbitfl::harness::synthesize;
use orbitfl::learner::{evaluate, supervised_train, Architecture, Sample, TrainSettings};

/// Small deterministic config for fast integration runs.
pub fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        rounds: 20,
        ..ExperimentConfig::default()
    }
}

pub fn architecture(cfg: &ExperimentConfig) -> Architecture {
    let inputs = (cfg.grid_height * cfg.grid_width * cfg.grid_channels) as usize;
    match cfg.model {
        ModelKind::Mlp => {
            Architecture::mlp(inputs, cfg.hidden_width as usize, cfg.num_classes as usize)
        }
        ModelKind::Logistic => Architecture::logistic(inputs, cfg.num_classes as usize),
    }
}

/// Accuracy of one model trained centrally on every non-evaluation sample
/// with its true label.
pub fn centralized_accuracy(cfg: &ExperimentConfig, epochs: u32) -> f64 {
    let part = synthesize(cfg).unwrap();
    let mut pool: Vec<Sample> = part.data.labeled.clone();
    for (shard, labels) in part.data.shards.iter().zip(&part.hidden_labels) {
        for (s, &l) in shard.iter().zip(labels) {
            pool.push(Sample {
                features: s.features.clone(),
                label: Some(l),
            });
        }
    }
    let arch = architecture(cfg);
    let mut rng = SeededRng::new(cfg.seed ^ 0x5eed, StreamId::ModelInit);
    let mut w = arch.init(&mut rng);
    let settings = TrainSettings {
        epochs,
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        batch_size: cfg.batch_size as usize,
    };
    supervised_train(&arch, part.data.shape, &mut w, &pool, &settings, &mut rng).unwrap();
    evaluate(&arch, &w, &part.data.eval).0
}
