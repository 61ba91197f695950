//! Participant selection, staleness-weighted intra-cluster aggregation and
//! ground-station averaging, plus the round orchestrator.

mod orchestrator;

pub use orchestrator::{
    ClientRound, ClusterLogRow, ClusterTrace, RoundMetrics, RoundReport, RoundTrace, SimError,
    Simulation, CLUSTER_LOG_HEADER, METRICS_HEADER,
};

use thiserror::Error;

use crate::domain::ModelVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("no participants")]
    NoParticipants,
    #[error("total data size is zero")]
    ZeroData,
    #[error("update of client {id} has dimension {got}, expected {expected}")]
    Dimension {
        id: u32,
        got: usize,
        expected: usize,
    },
}

/// `1 / phi`, with `phi` clamped to at least one.
pub fn staleness_weight(phi: u32) -> f64 {
    1.0 / f64::from(phi.max(1))
}

/// Rounds since the client last joined an aggregation; first-timers and
/// same-round rejoiners get 1.
pub fn staleness(round: u32, last_participation: Option<u32>) -> u32 {
    last_participation.map_or(1, |last| round.saturating_sub(last).max(1))
}

/// The aggregated subset of one cluster in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantSet {
    pub ids: Vec<u32>,
    /// Completion-time cutoff; every member finished within it.
    pub threshold_s: f64,
}

/// Nearest-rank `q`-quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64 - 1e-9).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Picks the `max(1, floor(eps * cluster_size))` fastest of the clients
/// that finished, ties by id. `finished` holds `(id, completion time)`;
/// `history` holds completion times of recent rounds including this one.
/// Returns `None` when nobody finished.
pub fn select_participants(
    finished: &[(u32, f64)],
    cluster_size: usize,
    epsilon: f64,
    history: &[f64],
) -> Option<ParticipantSet> {
    if finished.is_empty() {
        return None;
    }
    let want = ((epsilon * cluster_size as f64 + 1e-9).floor() as usize).max(1);
    let mut order = finished.to_vec();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    order.truncate(want.min(finished.len()));
    let slowest = order.last().map_or(0.0, |p| p.1);
    let cutoff = quantile(history, epsilon).unwrap_or(slowest).max(slowest);
    let mut ids: Vec<u32> = order.into_iter().map(|p| p.0).collect();
    ids.sort_unstable();
    Some(ParticipantSet {
        ids,
        threshold_s: cutoff,
    })
}

/// One decoded update entering an intra-cluster aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub client_id: u32,
    pub data_size: usize,
    pub staleness: u32,
    pub update: ModelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub model: ModelVector,
    /// `model - start`, accumulated directly.
    pub increment: ModelVector,
    /// Coefficient of every contribution, in ascending id order.
    pub coefficients: Vec<(u32, f64)>,
}

/// `w + sum_i (|D_i| / |D_m|) p_i Q(S(dw_i))`, reduced in ascending id
/// order. With `normalize` the coefficients are rescaled to sum to one.
pub fn intra_cluster_aggregate(
    start: &ModelVector,
    contributions: &[Contribution],
    normalize: bool,
) -> Result<Aggregated, AggregationError> {
    if contributions.is_empty() {
        return Err(AggregationError::NoParticipants);
    }
    let total: usize = contributions.iter().map(|c| c.data_size).sum();
    if total == 0 {
        return Err(AggregationError::ZeroData);
    }
    let mut sorted: Vec<&Contribution> = contributions.iter().collect();
    sorted.sort_by_key(|c| c.client_id);
    let mut coefficients: Vec<(u32, f64)> = sorted
        .iter()
        .map(|c| {
            (
                c.client_id,
                c.data_size as f64 / total as f64 * staleness_weight(c.staleness),
            )
        })
        .collect();
    if normalize {
        let sum: f64 = coefficients.iter().map(|c| c.1).sum();
        coefficients.iter_mut().for_each(|c| c.1 /= sum);
    }
    let mut increment = ModelVector::zeros(start.len());
    for (c, &(_, coef)) in sorted.iter().zip(&coefficients) {
        if c.update.len() != start.len() {
            return Err(AggregationError::Dimension {
                id: c.client_id,
                got: c.update.len(),
                expected: start.len(),
            });
        }
        increment.add_scaled(coef, &c.update);
    }
    let mut model = start.clone();
    model.add_scaled(1.0, &increment);
    Ok(Aggregated {
        model,
        increment,
        coefficients,
    })
}

/// `sum_k (D_k / D) w^k` over cluster models.
pub fn gs_aggregate(models: &[(&ModelVector, usize)]) -> Result<ModelVector, AggregationError> {
    let total: usize = models.iter().map(|m| m.1).sum();
    if models.is_empty() || total == 0 {
        return Err(AggregationError::ZeroData);
    }
    let mut out = ModelVector::zeros(models[0].0.len());
    for (w, d) in models {
        out.add_scaled(*d as f64 / total as f64, w);
    }
    Ok(out)
}
