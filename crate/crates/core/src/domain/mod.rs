//! Shared data types, configuration and seeded randomness.

mod config;
mod rng;
mod vector;

pub use config::{ConfigError, ExperimentConfig, ModelKind};
pub use rng::{SeededRng, StreamId};
pub use vector::ModelVector;

/// One satellite client.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: u32,
    pub orbit_plane: u32,
    pub phase_deg: f64,
    pub local_model: ModelVector,
    /// Round of the last intra-cluster aggregation this client joined.
    pub last_participation_round: Option<u32>,
    pub completion_time_s: f64,
    pub cpu_freq_hz: f64,
    pub cycles_per_sample: f64,
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
}

/// Terrestrial node holding the labeled data.
#[derive(Debug, Clone)]
pub struct GroundStation {
    pub id: u32,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub attached_ps_ids: Vec<u32>,
}
