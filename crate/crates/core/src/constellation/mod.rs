//! Circular-orbit geometry, link budget, and per-round time and energy
//! accounting.

mod accounting;

pub use accounting::{
    comm_time, comp_time, energy_report, objective, round_time, ClusterTiming, EnergyInput,
    EnergyReport, EventRecord, TimeReport, EVENT_LOG_HEADER,
};

use std::f64::consts::PI;

use thiserror::Error;

/// Standard gravitational parameter of Earth, m^3/s^2.
pub const GM_EARTH: f64 = 3.986_004_418e14;
/// Mean Earth radius, m.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Sidereal rotation rate, rad/s.
pub const EARTH_ROTATION_RAD_S: f64 = 7.292_115_9e-5;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Position = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("cpu frequency must be positive, got {0}")]
    CpuFrequency(f64),
    #[error("no usable link (rate {0} bit/s)")]
    NoLink(f64),
    #[error("cluster {0} has no participating client")]
    EmptyCluster(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitalSlot {
    pub plane_raan_deg: f64,
    pub phase_deg: f64,
    pub altitude_km: f64,
    pub inclination_deg: f64,
}

impl OrbitalSlot {
    pub fn semi_major_axis_m(&self) -> f64 {
        EARTH_RADIUS_M + self.altitude_km * 1e3
    }

    /// Mean motion in rad/s.
    pub fn angular_rate(&self) -> f64 {
        (GM_EARTH / self.semi_major_axis_m().powi(3)).sqrt()
    }

    pub fn period_s(&self) -> f64 {
        2.0 * PI / self.angular_rate()
    }

    /// Earth-centred inertial position at `t` seconds.
    pub fn inertial_position(&self, t: f64) -> Position {
        let a = self.semi_major_axis_m();
        let u = self.phase_deg.to_radians() + self.angular_rate() * t;
        let (su, cu) = u.sin_cos();
        let (si, ci) = self.inclination_deg.to_radians().sin_cos();
        let (sr, cr) = self.plane_raan_deg.to_radians().sin_cos();
        [
            a * (cr * cu - sr * su * ci),
            a * (sr * cu + cr * su * ci),
            a * su * si,
        ]
    }
}

/// Earth-fixed position of a satellite `t` seconds after epoch.
pub fn propagate(slot: &OrbitalSlot, t: f64) -> Position {
    let [x, y, z] = slot.inertial_position(t);
    let (s, c) = (-EARTH_ROTATION_RAD_S * t).sin_cos();
    [c * x - s * y, s * x + c * y, z]
}

/// Walker-delta layout: `num_planes` evenly spaced planes, satellites
/// evenly phased within each plane, one phasing step between planes.
pub fn walker_layout(
    num_sats: u32,
    num_planes: u32,
    altitude_km: f64,
    inclination_deg: f64,
) -> Vec<OrbitalSlot> {
    let per_plane = num_sats.div_ceil(num_planes.max(1));
    (0..num_sats)
        .map(|i| {
            let plane = i / per_plane;
            let slot = i % per_plane;
            OrbitalSlot {
                plane_raan_deg: 360.0 * f64::from(plane) / f64::from(num_planes),
                phase_deg: (360.0 * f64::from(slot) / f64::from(per_plane)
                    + 360.0 * f64::from(plane) / f64::from(num_sats))
                    % 360.0,
                altitude_km,
                inclination_deg,
            }
        })
        .collect()
}

/// Earth-fixed position of a point on the surface.
pub fn ground_position(lat_deg: f64, lon_deg: f64) -> Position {
    let (sl, cl) = lat_deg.to_radians().sin_cos();
    let (so, co) = lon_deg.to_radians().sin_cos();
    [
        EARTH_RADIUS_M * cl * co,
        EARTH_RADIUS_M * cl * so,
        EARTH_RADIUS_M * sl,
    ]
}

pub fn distance(a: &Position, b: &Position) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn norm(p: &Position) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// True when the straight segment between two satellites clears the Earth.
pub fn line_of_sight(a: &Position, b: &Position) -> bool {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if dd == 0.0 {
        return norm(a) > EARTH_RADIUS_M;
    }
    let t = (-(a[0] * d[0] + a[1] * d[1] + a[2] * d[2]) / dd).clamp(0.0, 1.0);
    let closest = [a[0] + t * d[0], a[1] + t * d[1], a[2] + t * d[2]];
    norm(&closest) > EARTH_RADIUS_M
}

/// Free-space path gain `(c / (4 pi d f_c))^2`, capped at 1.
pub fn free_space_gain(distance_m: f64, carrier_hz: f64) -> f64 {
    let g = (SPEED_OF_LIGHT / (4.0 * PI * distance_m * carrier_hz)).powi(2);
    g.min(1.0)
}

pub fn dbm_per_hz_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn dbw_to_watts(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

/// Shannon rate `B log2(1 + P h / N0)`.
pub fn link_rate(
    bandwidth_hz: f64,
    tx_power_w: f64,
    gain: f64,
    noise_w_per_hz: f64,
) -> Result<f64, LinkError> {
    if bandwidth_hz <= 0.0 || bandwidth_hz.is_nan() {
        return Err(LinkError::Bandwidth(bandwidth_hz));
    }
    Ok(bandwidth_hz * (tx_power_w * gain / noise_w_per_hz).ln_1p() / std::f64::consts::LN_2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub rate_bps: f64,
    pub gain: f64,
    pub distance_m: f64,
}

/// Link from a client at `from` to its parameter server at `to`.
pub fn link_budget(
    from: &Position,
    to: &Position,
    carrier_hz: f64,
    bandwidth_hz: f64,
    tx_power_w: f64,
    noise_w_per_hz: f64,
) -> Result<LinkBudget, LinkError> {
    let distance_m = distance(from, to);
    let gain = free_space_gain(distance_m, carrier_hz);
    let rate_bps = link_rate(bandwidth_hz, tx_power_w, gain, noise_w_per_hz)?;
    Ok(LinkBudget {
        rate_bps,
        gain,
        distance_m,
    })
}
