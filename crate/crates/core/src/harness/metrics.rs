//! CSV rendering and parsing of the run artifacts, and atomic file writes.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::aggregation::{ClusterLogRow, RoundMetrics, CLUSTER_LOG_HEADER, METRICS_HEADER};
use crate::constellation::{EventRecord, EVENT_LOG_HEADER};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsvError {
    #[error("missing or unexpected header")]
    Header,
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
}

fn field<T: FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad field `{s}`"))
}

fn columns(line: &str, n: usize) -> Result<Vec<&str>, String> {
    let cols: Vec<&str> = line.trim().split(',').collect();
    if cols.len() == n {
        Ok(cols)
    } else {
        Err(format!("expected {n} columns, got {}", cols.len()))
    }
}

impl FromStr for RoundMetrics {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let c = columns(line, 10)?;
        Ok(Self {
            round: field(c[0])?,
            wall_clock_s: field(c[1])?,
            accuracy: field(c[2])?,
            loss: field(c[3])?,
            e_tx_j: field(c[4])?,
            e_cmp_j: field(c[5])?,
            bytes_up: field(c[6])?,
            bytes_down: field(c[7])?,
            participants: field(c[8])?,
            skipped: field(c[9])?,
        })
    }
}

impl FromStr for ClusterLogRow {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let c = columns(line, 6)?;
        let members = if c[5].is_empty() {
            Vec::new()
        } else {
            c[5].split(';').map(field).collect::<Result<_, _>>()?
        };
        Ok(Self {
            round: field(c[0])?,
            cluster: field(c[1])?,
            ps_id: field(c[2])?,
            t_agg_s: field(c[3])?,
            t_broc_s: field(c[4])?,
            members,
        })
    }
}

fn render<T: ToString>(header: &str, rows: &[T]) -> String {
    let mut out = String::with_capacity(header.len() + 1 + rows.len() * 64);
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

fn parse<T: FromStr<Err = String>>(header: &str, text: &str) -> Result<Vec<T>, CsvError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(CsvError::Header);
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.parse().map_err(|reason| CsvError::Row {
                line: i + 2,
                reason,
            })
        })
        .collect()
}

pub fn metrics_csv(rows: &[RoundMetrics]) -> String {
    render(METRICS_HEADER, rows)
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<RoundMetrics>, CsvError> {
    parse(METRICS_HEADER, text)
}

pub fn events_csv(rows: &[EventRecord]) -> String {
    render(EVENT_LOG_HEADER, rows)
}

pub fn parse_events_csv(text: &str) -> Result<Vec<EventRecord>, CsvError> {
    parse(EVENT_LOG_HEADER, text)
}

pub fn clusters_csv(rows: &[ClusterLogRow]) -> String {
    render(CLUSTER_LOG_HEADER, rows)
}

pub fn parse_clusters_csv(text: &str) -> Result<Vec<ClusterLogRow>, CsvError> {
    parse(CLUSTER_LOG_HEADER, text)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
