use std::fmt;
use std::str::FromStr;

use super::LinkError;

/// `D Q / f`: seconds to push `samples` samples through a CPU.
pub fn comp_time(samples: f64, cycles_per_sample: f64, cpu_freq_hz: f64) -> Result<f64, LinkError> {
    if cpu_freq_hz <= 0.0 || cpu_freq_hz.is_nan() {
        return Err(LinkError::CpuFrequency(cpu_freq_hz));
    }
    Ok(samples * cycles_per_sample / cpu_freq_hz)
}

/// `zeta / r`. A non-positive rate means the link is not usable this round.
pub fn comm_time(payload_bits: f64, rate_bps: f64) -> Result<f64, LinkError> {
    if rate_bps <= 0.0 || rate_bps.is_nan() {
        return Err(LinkError::NoLink(rate_bps));
    }
    Ok(payload_bits / rate_bps)
}

/// Timing inputs of one cluster for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTiming {
    /// `t_cmp + t_com` of every aggregated client.
    pub participant_times: Vec<f64>,
    pub aggregation_delay_s: f64,
    pub broadcast_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterTerm {
    pub slowest_client_s: f64,
    pub aggregation_delay_s: f64,
    pub broadcast_s: f64,
    pub term_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeReport {
    pub clusters: Vec<ClusterTerm>,
    pub total_s: f64,
}

/// Sums `max_i T_i + T_agg + t_broc` over the clusters attached to the
/// ground station, in the order given.
pub fn round_time(clusters: &[ClusterTiming]) -> Result<TimeReport, LinkError> {
    let mut terms = Vec::with_capacity(clusters.len());
    let mut total_s = 0.0;
    for (k, c) in clusters.iter().enumerate() {
        if c.participant_times.is_empty() {
            return Err(LinkError::EmptyCluster(k));
        }
        let slowest = c
            .participant_times
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let term_s = slowest + c.aggregation_delay_s + c.broadcast_s;
        total_s += term_s;
        terms.push(ClusterTerm {
            slowest_client_s: slowest,
            aggregation_delay_s: c.aggregation_delay_s,
            broadcast_s: c.broadcast_s,
            term_s,
        });
    }
    Ok(TimeReport {
        clusters: terms,
        total_s,
    })
}

/// Energy inputs of one client for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyInput {
    pub client_id: u32,
    /// Zero when the client did not upload.
    pub t_com_s: f64,
    pub transmitted: bool,
    pub tx_power_w: f64,
    pub cpu_freq_hz: f64,
    pub t_cmp_s: f64,
}

impl EnergyInput {
    /// `P0 |w| / r`, written as `P0 t_com`.
    pub fn tx_energy(&self) -> f64 {
        if self.transmitted {
            self.tx_power_w * self.t_com_s
        } else {
            0.0
        }
    }

    /// `eps0 f^3 t_cmp`.
    pub fn cmp_energy(&self, energy_coefficient: f64) -> f64 {
        energy_coefficient * self.cpu_freq_hz.powi(3) * self.t_cmp_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyReport {
    pub e_tx: f64,
    pub e_cmp: f64,
    pub e_total: f64,
}

/// Totals per-client energy in ascending client id.
pub fn energy_report(inputs: &[EnergyInput], energy_coefficient: f64) -> EnergyReport {
    let mut sorted: Vec<&EnergyInput> = inputs.iter().collect();
    sorted.sort_by_key(|c| c.client_id);
    let mut report = EnergyReport::default();
    for c in sorted {
        report.e_tx += c.tx_energy();
        report.e_cmp += c.cmp_energy(energy_coefficient);
    }
    report.e_total = report.e_tx + report.e_cmp;
    report
}

/// The (time, energy) pair both minimised by the framework. Kept as a
/// pair; nothing scalarises it.
pub fn objective(total_time_s: f64, total_energy_j: f64) -> (f64, f64) {
    (total_time_s, total_energy_j)
}

pub const EVENT_LOG_HEADER: &str =
    "round,client_id,t_cmp_s,t_com_s,bits_up,e_tx_j,e_cmp_j,participated";

/// One client's accounting for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub round: u32,
    pub client_id: u32,
    pub t_cmp_s: f64,
    pub t_com_s: f64,
    pub bits_up: u64,
    pub e_tx_j: f64,
    pub e_cmp_j: f64,
    pub participated: bool,
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{}",
            self.round,
            self.client_id,
            self.t_cmp_s,
            self.t_com_s,
            self.bits_up,
            self.e_tx_j,
            self.e_cmp_j,
            u8::from(self.participated)
        )
    }
}

impl FromStr for EventRecord {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 8 {
            return Err(format!("expected 8 columns, got {}", cols.len()));
        }
        fn p<T: FromStr>(s: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("bad field `{s}`"))
        }
        Ok(Self {
            round: p(cols[0])?,
            client_id: p(cols[1])?,
            t_cmp_s: p(cols[2])?,
            t_com_s: p(cols[3])?,
            bits_up: p(cols[4])?,
            e_tx_j: p(cols[5])?,
            e_cmp_j: p(cols[6])?,
            participated: match cols[7] {
                "1" => true,
                "0" => false,
                other => return Err(format!("bad flag `{other}`")),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comp_time_examples() {
        assert_eq!(comp_time(100.0, 5e8, 5e10).unwrap(), 1.0);
        assert_eq!(comp_time(0.0, 5e8, 5e10).unwrap(), 0.0);
        // 64 * 1e6 / 5e10 = 6.4e7 / 5e10 = 1.28e-3
        assert!((comp_time(64.0, 1e6, 5e10).unwrap() - 1.28e-3).abs() < 1e-15);
        assert!(comp_time(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn comm_time_examples() {
        assert_eq!(comm_time(8e7, 8e7).unwrap(), 1.0);
        assert_eq!(comm_time(0.0, 8e7).unwrap(), 0.0);
        assert!(matches!(comm_time(1.0, 0.0), Err(LinkError::NoLink(_))));
    }

    #[test]
    fn cluster_term_is_max_plus_constants() {
        let c = ClusterTiming {
            participant_times: vec![1.0, 2.0, 3.0],
            aggregation_delay_s: 0.0,
            broadcast_s: 0.5,
        };
        let one = round_time(std::slice::from_ref(&c)).unwrap();
        assert_eq!(one.total_s, 3.5);
        let two = round_time(&[c.clone(), c]).unwrap();
        assert_eq!(two.total_s, 7.0);
    }

    #[test]
    fn empty_cluster_rejected() {
        let c = ClusterTiming {
            participant_times: vec![],
            aggregation_delay_s: 0.0,
            broadcast_s: 0.0,
        };
        assert_eq!(round_time(&[c]), Err(LinkError::EmptyCluster(0)));
    }

    #[test]
    fn slower_client_never_decreases_time() {
        let base = ClusterTiming {
            participant_times: vec![1.0, 2.0],
            aggregation_delay_s: 0.1,
            broadcast_s: 0.2,
        };
        let t0 = round_time(std::slice::from_ref(&base)).unwrap().total_s;
        for extra in [0.5, 2.0, 10.0] {
            let mut c = base.clone();
            c.participant_times.push(extra);
            assert!(round_time(&[c]).unwrap().total_s >= t0);
        }
    }

    #[test]
    fn energy_examples() {
        // 30 dBW transmitter sending 8e7 bits at 8e7 bit/s.
        let tx = EnergyInput {
            client_id: 0,
            t_com_s: comm_time(8e7, 8e7).unwrap(),
            transmitted: true,
            tx_power_w: 1000.0,
            cpu_freq_hz: 1e9,
            t_cmp_s: 1.0,
        };
        assert_eq!(tx.tx_energy(), 1000.0);
        assert!((tx.cmp_energy(1e-28) - 0.1).abs() < 1e-15);
        let skipped = EnergyInput {
            transmitted: false,
            client_id: 1,
            ..tx
        };
        assert_eq!(skipped.tx_energy(), 0.0);
        let r = energy_report(&[skipped, tx], 1e-28);
        assert_eq!(r.e_tx, 1000.0);
        assert_eq!(r.e_total, r.e_tx + r.e_cmp);
        assert_eq!(objective(3.5, 1000.1), (3.5, 1000.1));
    }

    #[test]
    fn event_row_round_trip() {
        let e = EventRecord {
            round: 3,
            client_id: 7,
            t_cmp_s: 0.1 + 0.2,
            t_com_s: 1.0 / 3.0,
            bits_up: 11288,
            e_tx_j: 1000.0 / 3.0,
            e_cmp_j: 1e-7,
            participated: true,
        };
        let back: EventRecord = e.to_string().parse().unwrap();
        assert_eq!(back, e);
        assert!("1,2,3".parse::<EventRecord>().is_err());
    }
}
