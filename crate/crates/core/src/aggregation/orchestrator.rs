use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use thiserror::Error;

use super::{
    gs_aggregate, intra_cluster_aggregate, select_participants, staleness, AggregationError,
    Contribution,
};
use crate::clustering::{form_clusters, ClusterAssignment, ClusteringError};
use crate::compression::{
    decode, decode_wire, dense_len, encode_wire, kept_count, quantize, select_bitwidth, sparsify,
    CodecError,
};
use crate::constellation::{
    comm_time, comp_time, dbm_per_hz_to_watts, dbw_to_watts, energy_report, line_of_sight,
    link_budget, propagate, round_time, walker_layout, ClusterTiming, EnergyInput, EventRecord,
    LinkError, OrbitalSlot, Position,
};
use crate::domain::{
    ClientState, ConfigError, ExperimentConfig, GroundStation, ModelKind, ModelVector, SeededRng,
    StreamId,
};
use crate::learner::{
    evaluate, local_train, supervised_train, Architecture, FederatedData, GridShape, LearnerError,
    LocalOutcome, SemiSettings, StrongPolicy, TrainSettings,
};

pub const METRICS_HEADER: &str =
    "round,wall_clock_s,accuracy,loss,e_tx_j,e_cmp_j,bytes_up,bytes_down,participants,skipped";

pub const CLUSTER_LOG_HEADER: &str = "round,cluster,ps_id,t_agg_s,t_broc_s,members";

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("data does not match the configuration: {0}")]
    Data(String),
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u32,
    pub wall_clock_s: f64,
    pub accuracy: f64,
    pub loss: f64,
    pub e_tx_j: f64,
    pub e_cmp_j: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub participants: u32,
    pub skipped: u32,
}

impl fmt::Display for RoundMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.wall_clock_s,
            self.accuracy,
            self.loss,
            self.e_tx_j,
            self.e_cmp_j,
            self.bytes_up,
            self.bytes_down,
            self.participants,
            self.skipped
        )
    }
}

/// Per-cluster timing row, enough to recompute the round time from the
/// event log.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLogRow {
    pub round: u32,
    pub cluster: usize,
    pub ps_id: u32,
    pub t_agg_s: f64,
    pub t_broc_s: f64,
    pub members: Vec<u32>,
}

impl fmt::Display for ClusterLogRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let members: Vec<String> = self.members.iter().map(u32::to_string).collect();
        write!(
            f,
            "{},{},{},{},{},{}",
            self.round,
            self.cluster,
            self.ps_id,
            self.t_agg_s,
            self.t_broc_s,
            members.join(";")
        )
    }
}

/// What one client did in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRound {
    pub client_id: u32,
    pub data_size: usize,
    /// Final local model `start + dw`.
    pub local_model: ModelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTrace {
    pub start: ModelVector,
    pub trained: Vec<ClientRound>,
    pub participants: Vec<u32>,
    pub result: ModelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub clusters: Vec<ClusterTrace>,
    /// Ground-station model at the end of the round.
    pub global: ModelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub metrics: RoundMetrics,
    /// One record per client, ascending id.
    pub events: Vec<EventRecord>,
    pub clusters: Vec<ClusterLogRow>,
    /// Clients that were out of sight or had no confident sample.
    pub skipped_ids: Vec<u32>,
    /// Encoded uploads, ascending client id, when wire recording is on.
    pub wire: Vec<Vec<u8>>,
    pub trace: Option<RoundTrace>,
}

/// Full federation state advanced one round at a time.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ExperimentConfig,
    arch: Architecture,
    shape: GridShape,
    data: FederatedData,
    clients: Vec<ClientState>,
    slots: Vec<OrbitalSlot>,
    ground: GroundStation,
    global: ModelVector,
    assignment: ClusterAssignment,
    cluster_models: Vec<ModelVector>,
    history: Vec<VecDeque<Vec<f64>>>,
    prev_delta: Vec<ModelVector>,
    cluster_delta: Vec<ModelVector>,
    client_rngs: Vec<SeededRng>,
    codec_rngs: Vec<SeededRng>,
    gs_rng: SeededRng,
    cluster_rng: SeededRng,
    round: u32,
    sim_time: f64,
    record_trace: bool,
    record_wire: bool,
}

impl Simulation {
    /// Builds the federation and runs the warm-up that seeds clustering.
    pub fn new(cfg: ExperimentConfig, data: FederatedData) -> Result<Self, SimError> {
        let cfg = cfg.validate()?;
        let shape = GridShape::new(
            cfg.grid_height as usize,
            cfg.grid_width as usize,
            cfg.grid_channels as usize,
        );
        if data.shape != shape || data.num_classes != cfg.num_classes as usize {
            return Err(SimError::Data("grid shape or class count differs".into()));
        }
        if data.shards.len() != cfg.num_clients as usize {
            return Err(SimError::Data(format!(
                "{} shards for {} clients",
                data.shards.len(),
                cfg.num_clients
            )));
        }
        if data.labeled.is_empty() {
            return Err(SimError::Data(
                "ground station holds no labeled data".into(),
            ));
        }
        let arch = match cfg.model {
            ModelKind::Mlp => {
                Architecture::mlp(shape.len(), cfg.hidden_width as usize, data.num_classes)
            }
            ModelKind::Logistic => Architecture::logistic(shape.len(), data.num_classes),
        };
        let n = cfg.num_clients as usize;
        let slots = walker_layout(
            cfg.num_clients,
            cfg.num_planes,
            cfg.altitude_km,
            cfg.inclination_deg,
        );
        let per_plane = cfg.num_clients.div_ceil(cfg.num_planes.max(1));
        let mut hw = SeededRng::new(cfg.seed, StreamId::Hardware);
        let tx_power_w = dbw_to_watts(cfg.tx_power_dbw);
        let mut clients = Vec::with_capacity(n);
        for (i, slot) in slots.iter().enumerate() {
            let spread = cfg.cpu_heterogeneity * (2.0 * hw.random::<f64>() - 1.0);
            clients.push(ClientState {
                id: i as u32,
                orbit_plane: i as u32 / per_plane,
                phase_deg: slot.phase_deg,
                local_model: ModelVector::zeros(arch.param_count()),
                last_participation_round: None,
                completion_time_s: 0.0,
                cpu_freq_hz: cfg.cpu_freq_hz * (1.0 + spread),
                cycles_per_sample: cfg.cycles_per_sample,
                bandwidth_hz: cfg.bandwidth_hz,
                tx_power_w,
            });
        }
        let mut init_rng = SeededRng::new(cfg.seed, StreamId::ModelInit);
        let global = arch.init(&mut init_rng);
        let d = global.len();
        let mut sim = Self {
            arch,
            shape,
            clients,
            slots,
            ground: GroundStation {
                id: 0,
                lat_deg: cfg.gs_lat_deg,
                lon_deg: cfg.gs_lon_deg,
                attached_ps_ids: Vec::new(),
            },
            global,
            assignment: ClusterAssignment {
                labels: vec![0; n],
                ps_ids: Vec::new(),
                centroids: Vec::new(),
            },
            cluster_models: Vec::new(),
            history: Vec::new(),
            prev_delta: vec![ModelVector::zeros(d); n],
            cluster_delta: vec![ModelVector::zeros(d); n],
            client_rngs: (0..n as u32)
                .map(|i| SeededRng::new(cfg.seed, StreamId::Client(i)))
                .collect(),
            codec_rngs: (0..n as u32)
                .map(|i| SeededRng::new(cfg.seed, StreamId::Codec(i)))
                .collect(),
            gs_rng: SeededRng::new(cfg.seed, StreamId::GroundStation),
            cluster_rng: SeededRng::new(cfg.seed, StreamId::Clustering),
            round: 0,
            sim_time: 0.0,
            record_trace: false,
            record_wire: false,
            data,
            cfg,
        };
        sim.warm_up()?;
        Ok(sim)
    }

    /// Keep per-round start models and local models.
    pub fn with_trace(mut self, on: bool) -> Self {
        self.record_trace = on;
        self
    }

    /// Keep the encoded bytes of every upload.
    pub fn with_wire(mut self, on: bool) -> Self {
        self.record_wire = on;
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn data(&self) -> &FederatedData {
        &self.data
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn ground_station(&self) -> &GroundStation {
        &self.ground
    }

    pub fn assignment(&self) -> &ClusterAssignment {
        &self.assignment
    }

    pub fn global_model(&self) -> &ModelVector {
        &self.global
    }

    pub fn cluster_models(&self) -> &[ModelVector] {
        &self.cluster_models
    }

    /// Last completed round; 0 before the first.
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    pub fn positions(&self, t: f64) -> Vec<Position> {
        self.slots.iter().map(|s| propagate(s, t)).collect()
    }

    fn gs_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.cfg.local_epochs,
            learning_rate: self.cfg.learning_rate,
            momentum: self.cfg.momentum,
            batch_size: self.cfg.batch_size as usize,
        }
    }

    fn semi_settings(&self, confidence: f64) -> SemiSettings {
        SemiSettings {
            train: self.gs_settings(),
            confidence,
            beta_param: self.cfg.beta_param,
            loss_weight: self.cfg.loss_weight,
            strong: StrongPolicy {
                noise_scale: self.cfg.strong_noise,
                cutout_fraction: self.cfg.cutout_fraction,
            },
        }
    }

    fn gs_train(&mut self) -> Result<(), SimError> {
        let settings = self.gs_settings();
        supervised_train(
            &self.arch,
            self.shape,
            &mut self.global,
            &self.data.labeled,
            &settings,
            &mut self.gs_rng,
        )?;
        Ok(())
    }

    /// Round 0: supervised training at the ground station, one unfiltered
    /// local pass on every client, then clustering on those updates.
    fn warm_up(&mut self) -> Result<(), SimError> {
        self.gs_train()?;
        let settings = self.semi_settings(0.0);
        for i in 0..self.clients.len() {
            let outcome = local_train(
                &self.arch,
                self.shape,
                &self.data.shards[i],
                &self.global,
                &settings,
                &mut self.client_rngs[i],
            )?;
            if let LocalOutcome::Trained(u) = outcome {
                self.cluster_delta[i] = u.delta;
            }
        }
        self.recluster()
    }

    fn recluster(&mut self) -> Result<(), SimError> {
        let positions = self.positions(self.sim_time);
        let comp_times = self
            .clients
            .iter()
            .zip(&self.data.shards)
            .map(|(c, s)| comp_time(s.len() as f64, c.cycles_per_sample, c.cpu_freq_hz))
            .collect::<Result<Vec<_>, _>>()?;
        self.assignment = form_clusters(
            &self.cluster_delta,
            &positions,
            &comp_times,
            self.cfg.cluster_weight,
            self.cfg.num_clusters as usize,
            self.cfg.kmeans_max_iter as usize,
            &mut self.cluster_rng,
        )?;
        let k = self.assignment.num_clusters();
        self.cluster_models = vec![self.global.clone(); k];
        self.history = vec![VecDeque::new(); k];
        self.ground.attached_ps_ids = self.assignment.ps_ids.clone();
        Ok(())
    }

    fn cluster_data_sizes(&self) -> Vec<usize> {
        (0..self.assignment.num_clusters())
            .map(|k| {
                self.assignment
                    .members(k)
                    .iter()
                    .map(|&i| self.data.shards[i as usize].len())
                    .sum()
            })
            .collect()
    }

    fn aggregate_clusters(&self) -> Result<ModelVector, SimError> {
        let sizes = self.cluster_data_sizes();
        let pairs: Vec<(&ModelVector, usize)> = self.cluster_models.iter().zip(sizes).collect();
        Ok(gs_aggregate(&pairs)?)
    }

    /// Advances one round.
    pub fn run_round(&mut self) -> Result<RoundReport, SimError> {
        let m = self.round + 1;
        let cfg = self.cfg.clone();
        let interval = cfg.gs_interval.max(1);
        let dense_bytes = dense_len(self.global.len()) as u64;
        let dense_bits = 8.0 * dense_bytes as f64;
        let noise = dbm_per_hz_to_watts(cfg.noise_density);
        let positions = self.positions(self.sim_time);
        let mut bytes_down = 0u64;

        if (m - 1).is_multiple_of(interval) {
            self.gs_train()?;
            for w in &mut self.cluster_models {
                w.clone_from(&self.global);
            }
            bytes_down += dense_bytes * self.cluster_models.len() as u64;
        }

        let settings = self.semi_settings(cfg.confidence);
        let n = self.clients.len();
        let mut events: Vec<Option<EventRecord>> = vec![None; n];
        let mut energy = Vec::with_capacity(n);
        let mut timings = Vec::new();
        let mut cluster_rows = Vec::new();
        let mut cluster_traces = Vec::new();
        let mut skipped_ids = Vec::new();
        let mut wire: Vec<(u32, Vec<u8>)> = Vec::new();
        let mut bytes_up = 0u64;
        let mut participants = 0u32;

        for k in 0..self.assignment.num_clusters() {
            let ps = self.assignment.ps_ids[k];
            let members = self.assignment.members(k);
            let start = self.cluster_models[k].clone();
            let mut finished = Vec::new();
            let mut decoded = Vec::new();
            let mut trained = Vec::new();
            let mut min_rate = f64::INFINITY;
            let mut pending = Vec::new();
            let mut receivers = 0u64;

            for &id in &members {
                let i = id as usize;
                let client = &self.clients[i];
                let visible = !cfg.check_visibility
                    || id == ps
                    || line_of_sight(&positions[i], &positions[ps as usize]);
                if !visible {
                    skipped_ids.push(id);
                    pending.push((id, 0.0, 0.0, 0u64));
                    continue;
                }
                let rate = if id == ps {
                    f64::INFINITY
                } else {
                    receivers += 1;
                    let r = link_budget(
                        &positions[i],
                        &positions[ps as usize],
                        cfg.carrier_hz,
                        client.bandwidth_hz,
                        client.tx_power_w,
                        noise,
                    )?
                    .rate_bps;
                    min_rate = min_rate.min(r);
                    r
                };
                let outcome = local_train(
                    &self.arch,
                    self.shape,
                    &self.data.shards[i],
                    &start,
                    &settings,
                    &mut self.client_rngs[i],
                )?;
                let (samples, update) = match outcome {
                    LocalOutcome::Skipped { samples_processed } => (samples_processed, None),
                    LocalOutcome::Trained(u) => (u.samples_processed, Some(u.delta)),
                };
                let t_cmp =
                    comp_time(samples as f64, client.cycles_per_sample, client.cpu_freq_hz)?;
                let Some(delta) = update else {
                    skipped_ids.push(id);
                    pending.push((id, t_cmp, 0.0, 0));
                    continue;
                };
                let (received, bits) = if id == ps {
                    (delta.clone(), 0u64)
                } else if cfg.compression {
                    let kept = kept_count(delta.len(), cfg.keep_ratio);
                    let rng = &mut self.codec_rngs[i];
                    let sparse = sparsify(&delta, kept, rng)?;
                    let width =
                        select_bitwidth(&delta, &self.prev_delta[i], cfg.gradient_threshold);
                    let bytes = encode_wire(&quantize(&sparse, width, id, m, rng));
                    let out = decode(&decode_wire(&bytes)?)?;
                    let bits = 8 * bytes.len() as u64;
                    if self.record_wire {
                        wire.push((id, bytes));
                    }
                    (out, bits)
                } else {
                    let out: Vec<f64> = delta.iter().map(|&v| f64::from(v as f32)).collect();
                    (ModelVector::new(out), 8 * dense_bytes)
                };
                let t_com = if bits == 0 {
                    0.0
                } else {
                    comm_time(bits as f64, rate)?
                };
                bytes_up += bits / 8;
                let mut local = start.clone();
                local.add_scaled(1.0, &delta);
                self.clients[i].local_model = local;
                self.clients[i].completion_time_s = t_cmp + t_com;
                if self.record_trace {
                    trained.push(ClientRound {
                        client_id: id,
                        data_size: self.data.shards[i].len(),
                        local_model: self.clients[i].local_model.clone(),
                    });
                }
                if delta.norm() > 0.0 {
                    self.cluster_delta[i] = delta.clone();
                }
                self.prev_delta[i] = delta;
                finished.push((id, t_cmp + t_com));
                decoded.push((id, received));
                pending.push((id, t_cmp, t_com, bits));
            }

            let hist = &mut self.history[k];
            hist.push_back(finished.iter().map(|f| f.1).collect());
            while hist.len() > cfg.history_window.max(1) as usize {
                hist.pop_front();
            }
            let window: Vec<f64> = hist.iter().flatten().copied().collect();
            let selected =
                select_participants(&finished, members.len(), cfg.selection_rate, &window);
            let chosen = selected.as_ref().map_or(&[][..], |s| s.ids.as_slice());

            let mut t_broc = 0.0;
            if let Some(sel) = &selected {
                let contributions: Vec<Contribution> = decoded
                    .into_iter()
                    .filter(|(id, _)| sel.ids.contains(id))
                    .map(|(id, update)| Contribution {
                        client_id: id,
                        data_size: self.data.shards[id as usize].len(),
                        staleness: staleness(m, self.clients[id as usize].last_participation_round),
                        update,
                    })
                    .collect();
                let agg = intra_cluster_aggregate(&start, &contributions, cfg.normalize_weights)?;
                self.cluster_models[k] = agg.model;
                for &id in &sel.ids {
                    self.clients[id as usize].last_participation_round = Some(m);
                }
                if min_rate.is_finite() {
                    t_broc = comm_time(dense_bits, min_rate)?;
                }
                bytes_down += dense_bytes * receivers;
                participants += sel.ids.len() as u32;
                let times: Vec<f64> = finished
                    .iter()
                    .filter(|f| sel.ids.contains(&f.0))
                    .map(|f| f.1)
                    .collect();
                timings.push(ClusterTiming {
                    participant_times: times,
                    aggregation_delay_s: cfg.aggregation_delay_s,
                    broadcast_s: t_broc,
                });
            }

            for (id, t_cmp, t_com, bits) in pending {
                let c = &self.clients[id as usize];
                let input = EnergyInput {
                    client_id: id,
                    t_com_s: t_com,
                    transmitted: bits > 0,
                    tx_power_w: c.tx_power_w,
                    cpu_freq_hz: c.cpu_freq_hz,
                    t_cmp_s: t_cmp,
                };
                events[id as usize] = Some(EventRecord {
                    round: m,
                    client_id: id,
                    t_cmp_s: t_cmp,
                    t_com_s: t_com,
                    bits_up: bits,
                    e_tx_j: input.tx_energy(),
                    e_cmp_j: input.cmp_energy(cfg.energy_coefficient),
                    participated: chosen.contains(&id),
                });
                energy.push(input);
            }
            cluster_rows.push(ClusterLogRow {
                round: m,
                cluster: k,
                ps_id: ps,
                t_agg_s: if selected.is_some() {
                    cfg.aggregation_delay_s
                } else {
                    0.0
                },
                t_broc_s: t_broc,
                members: members.clone(),
            });
            if self.record_trace {
                cluster_traces.push(ClusterTrace {
                    start,
                    trained,
                    participants: chosen.to_vec(),
                    result: self.cluster_models[k].clone(),
                });
            }
        }

        let synced = m.is_multiple_of(interval);
        if synced {
            self.global = self.aggregate_clusters()?;
        }
        let time = round_time(&timings)?;
        let report = energy_report(&energy, cfg.energy_coefficient);
        self.sim_time += time.total_s;
        self.round = m;

        let eval_model = if synced {
            self.global.clone()
        } else {
            self.aggregate_clusters()?
        };
        let (accuracy, loss) = evaluate(&self.arch, &eval_model, &self.data.eval);

        if cfg.recluster_interval > 0 && m.is_multiple_of(cfg.recluster_interval) && m < cfg.rounds
        {
            if !synced {
                self.global = eval_model;
            }
            self.recluster()?;
        }

        skipped_ids.sort_unstable();
        wire.sort_by_key(|w| w.0);
        let events: Vec<EventRecord> = events.into_iter().flatten().collect();
        Ok(RoundReport {
            metrics: RoundMetrics {
                round: m,
                wall_clock_s: time.total_s,
                accuracy,
                loss,
                e_tx_j: report.e_tx,
                e_cmp_j: report.e_cmp,
                bytes_up,
                bytes_down,
                participants,
                skipped: skipped_ids.len() as u32,
            },
            events,
            clusters: cluster_rows,
            skipped_ids,
            wire: wire.into_iter().map(|w| w.1).collect(),
            trace: self.record_trace.then(|| RoundTrace {
                clusters: cluster_traces,
                global: self.global.clone(),
            }),
        })
    }
}
