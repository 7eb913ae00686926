//! The nine summary network quantities of a traffic matrix.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::matrix::TrafficMatrix;

/// Scalar summary of one traffic matrix. All maxima are 0 for an empty matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkQuantities {
    pub valid_requests: u64,
    pub unique_links: u64,
    pub max_link_requests: u64,
    pub unique_sources: u64,
    pub max_source_requests: u64,
    pub max_source_fanout: u64,
    pub unique_destinations: u64,
    pub max_destination_requests: u64,
    pub max_destination_fanin: u64,
}

impl NetworkQuantities {
    /// Returns the name of the first violated ordering relation, if any.
    pub fn check_ordering(&self) -> Result<(), &'static str> {
        let checks: [(bool, &'static str); 9] = [
            (self.unique_links <= self.valid_requests, "unique_links <= valid_requests"),
            (self.unique_sources <= self.unique_links, "unique_sources <= unique_links"),
            (self.unique_destinations <= self.unique_links, "unique_destinations <= unique_links"),
            (self.max_source_fanout <= self.unique_destinations, "max_source_fanout <= unique_destinations"),
            (self.max_destination_fanin <= self.unique_sources, "max_destination_fanin <= unique_sources"),
            (self.max_link_requests <= self.max_source_requests, "max_link_requests <= max_source_requests"),
            (self.max_source_requests <= self.valid_requests, "max_source_requests <= valid_requests"),
            (self.max_link_requests <= self.max_destination_requests, "max_link_requests <= max_destination_requests"),
            (self.max_destination_requests <= self.valid_requests, "max_destination_requests <= valid_requests"),
        ];
        match checks.iter().find(|c| !c.0) {
            Some(c) => Err(c.1),
            None => Ok(()),
        }
    }
}

/// Computes all nine quantities from row and column reductions of `m`.
pub fn compute_quantities(m: &TrafficMatrix) -> NetworkQuantities {
    let mut q = NetworkQuantities {
        valid_requests: m.request_total(),
        unique_links: m.nnz(),
        unique_sources: m.row_count() as u64,
        ..Default::default()
    };
    for (_, cols, counts) in m.iter_rows() {
        let row_sum: u64 = counts.iter().sum();
        let row_max = counts.iter().copied().max().unwrap_or(0);
        q.max_source_requests = q.max_source_requests.max(row_sum);
        q.max_source_fanout = q.max_source_fanout.max(cols.len() as u64);
        q.max_link_requests = q.max_link_requests.max(row_max);
    }
    let columns = m.columns();
    q.unique_destinations = columns.len() as u64;
    for (_, rows, counts) in columns.iter() {
        q.max_destination_requests = q.max_destination_requests.max(counts.iter().sum());
        q.max_destination_fanin = q.max_destination_fanin.max(rows.len() as u64);
    }
    q
}

/// Aggregation level of a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Base,
    Local,
    Global,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Base => "base",
            Level::Local => "local",
            Level::Global => "global",
        }
    }
}

impl std::str::FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Level::Base),
            "local" => Ok(Level::Local),
            "global" => Ok(Level::Global),
            other => Err(format!("unknown level {other:?}")),
        }
    }
}

/// Identity of the matrix a record describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub rank: u32,
    pub seq: u64,
    pub level: Level,
    /// Wall-clock milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

impl RecordMeta {
    pub fn now(rank: u32, seq: u64, level: Level) -> Self {
        Self {
            rank,
            seq,
            level,
            timestamp_ms: unix_millis(),
        }
    }
}

/// One line of an analytics log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticsRecord {
    #[serde(flatten)]
    pub meta: RecordMeta,
    #[serde(flatten)]
    pub quantities: NetworkQuantities,
}

/// Renders a single-line JSON record (no trailing newline).
pub fn quantities_to_record(q: &NetworkQuantities, meta: &RecordMeta) -> String {
    serde_json::to_string(&AnalyticsRecord {
        meta: *meta,
        quantities: *q,
    })
    .expect("record fields are plain integers and strings")
}

pub fn parse_record(line: &str) -> Result<AnalyticsRecord, serde_json::Error> {
    serde_json::from_str(line.trim_end())
}

/// Appends one record line to an analytics log, creating it if needed.
pub fn append_record(path: &Path, q: &NetworkQuantities, meta: &RecordMeta) -> std::io::Result<()> {
    let mut line = quantities_to_record(q, meta);
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())
}

pub(crate) fn unix_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
