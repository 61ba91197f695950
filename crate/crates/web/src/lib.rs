//! WebAssembly bindings for the demo page. Every export returns a flat
//! `Float64Array` whose layout is documented on the function.

use orbitfl::aggregation::Simulation;
use orbitfl::compression::{
    decode, decode_wire, dense_len, encode_wire, kept_count, quantize, sparsify, BitWidth,
};
use orbitfl::harness::{build_data, run_simulation};
use orbitfl::{ExperimentConfig, ModelVector, SeededRng, StreamId};
use wasm_bindgen::prelude::*;

fn demo_config(num_clients: u32, num_clusters: u32, seed: u64) -> Result<ExperimentConfig, String> {
    ExperimentConfig {
        num_clients,
        num_clusters,
        seed,
        samples_per_class: 300,
        ..ExperimentConfig::default()
    }
    .validate()
    .map_err(|e| e.to_string())
}

/// `[one decode (d), mean of all decodes (d), wire bytes, dense bytes]`.
pub fn quantize_values(
    values: &[f64],
    keep_ratio: f64,
    eight_bits: bool,
    trials: u32,
    seed: u64,
) -> Result<Vec<f64>, String> {
    if values.is_empty() || !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err("need values and a keep ratio in (0,1]".into());
    }
    let x = ModelVector::new(values.to_vec());
    let width = if eight_bits {
        BitWidth::Eight
    } else {
        BitWidth::Four
    };
    let k = kept_count(x.len(), keep_ratio);
    let mut rng = SeededRng::new(seed, StreamId::Codec(0));
    let mut first = Vec::new();
    let mut mean = vec![0.0; x.len()];
    let mut wire = 0;
    for t in 0..trials.max(1) {
        let sparse = sparsify(&x, k, &mut rng).map_err(|e| e.to_string())?;
        let bytes = encode_wire(&quantize(&sparse, width, 0, t, &mut rng));
        wire = bytes.len();
        let y =
            decode(&decode_wire(&bytes).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        if t == 0 {
            first = y.as_slice().to_vec();
        }
        for (m, v) in mean.iter_mut().zip(y.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= f64::from(trials.max(1)));
    let mut out = first;
    out.extend(mean);
    out.push(wire as f64);
    out.push(dense_len(x.len()) as f64);
    Ok(out)
}

/// Four values per client: latitude and longitude in degrees, cluster
/// label, 1 for a parameter server.
pub fn cluster_map(
    num_clients: u32,
    num_clusters: u32,
    theta: f64,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let mut cfg = demo_config(num_clients, num_clusters, seed)?;
    cfg.cluster_weight = theta;
    let cfg = cfg.validate().map_err(|e| e.to_string())?;
    let data = build_data(&cfg).map_err(|e| e.to_string())?;
    let sim = Simulation::new(cfg, data).map_err(|e| e.to_string())?;
    let a = sim.assignment();
    let mut out = Vec::with_capacity(4 * num_clients as usize);
    for (i, p) in sim.positions(sim.sim_time()).iter().enumerate() {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        out.push((p[2] / r).asin().to_degrees());
        out.push(p[1].atan2(p[0]).to_degrees());
        out.push(a.labels[i] as f64);
        out.push(f64::from(u8::from(a.is_ps(i as u32))));
    }
    Ok(out)
}

/// Six values per round: round, accuracy, loss, round time in seconds,
/// energy in joules, uplink bytes.
pub fn run_demo(
    num_clients: u32,
    num_clusters: u32,
    rounds: u32,
    compression: bool,
    selection_rate: f64,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let mut cfg = demo_config(num_clients, num_clusters, seed)?;
    cfg.rounds = rounds;
    cfg.compression = compression;
    cfg.selection_rate = selection_rate;
    let cfg = cfg.validate().map_err(|e| e.to_string())?;
    let data = build_data(&cfg).map_err(|e| e.to_string())?;
    let mut sim = Simulation::new(cfg, data).map_err(|e| e.to_string())?;
    let run = run_simulation(&mut sim).map_err(|e| e.to_string())?;
    Ok(run
        .rows
        .iter()
        .flat_map(|r| {
            [
                f64::from(r.round),
                r.accuracy,
                r.loss,
                r.wall_clock_s,
                r.e_tx_j + r.e_cmp_j,
                r.bytes_up as f64,
            ]
        })
        .collect())
}

#[wasm_bindgen]
pub fn quantize_demo(
    values: Vec<f64>,
    keep_ratio: f64,
    eight_bits: bool,
    trials: u32,
    seed: u64,
) -> Result<Vec<f64>, JsValue> {
    quantize_values(&values, keep_ratio, eight_bits, trials, seed)
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn constellation_clusters(
    num_clients: u32,
    num_clusters: u32,
    theta: f64,
    seed: u64,
) -> Result<Vec<f64>, JsValue> {
    cluster_map(num_clients, num_clusters, theta, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(
    num_clients: u32,
    num_clusters: u32,
    rounds: u32,
    compression: bool,
    selection_rate: f64,
    seed: u64,
) -> Result<Vec<f64>, JsValue> {
    run_demo(
        num_clients,
        num_clusters,
        rounds,
        compression,
        selection_rate,
        seed,
    )
    .map_err(|e| JsValue::from_str(&e))
}
