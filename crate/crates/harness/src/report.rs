//! Storage summaries.

use std::fmt;

use petg_core::timtree::TpStats;
use petg_core::Database;
use serde::Serialize;

/// Serializable copy of the TIM-Tree statistics.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StatsSummary {
    pub items_on_disk: u64,
    pub bytes_on_disk: u64,
    pub raw_bytes: u64,
    pub amplification: Option<f64>,
    pub files_per_level: Vec<usize>,
    pub global_memtable_bytes: usize,
    pub local_memtable_bytes: usize,
    pub block_reads: u64,
}

impl From<&TpStats> for StatsSummary {
    fn from(s: &TpStats) -> Self {
        StatsSummary {
            items_on_disk: s.items_on_disk,
            bytes_on_disk: s.bytes_on_disk,
            raw_bytes: s.raw_bytes,
            amplification: s.amplification,
            files_per_level: s.files_per_level.to_vec(),
            global_memtable_bytes: s.global_memtable_bytes,
            local_memtable_bytes: s.local_memtable_bytes,
            block_reads: s.block_reads,
        }
    }
}

/// Space used by the static and temporal parts against the raw input size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpaceReport {
    pub static_bytes: u64,
    pub temporal_bytes: u64,
    pub total_bytes: u64,
    /// Canonical CSV size of the temporal events written so far.
    pub raw_bytes: u64,
    /// `temporal_bytes / raw_bytes`.
    pub temporal_ratio: Option<f64>,
    pub stats: StatsSummary,
}

pub fn report_space(db: &Database) -> SpaceReport {
    let stats = db.stats();
    let static_bytes = db.static_bytes();
    let temporal_bytes = stats.bytes_on_disk;
    SpaceReport {
        static_bytes,
        temporal_bytes,
        total_bytes: static_bytes + temporal_bytes,
        raw_bytes: stats.raw_bytes,
        temporal_ratio: stats.amplification,
        stats: StatsSummary::from(&stats),
    }
}

fn human(b: u64) -> String {
    const UNITS: [&str; 4] = ["B", "K", "M", "G"];
    let mut x = b as f64;
    let mut u = 0;
    while x >= 1024.0 && u + 1 < UNITS.len() {
        x /= 1024.0;
        u += 1;
    }
    if u == 0 {
        format!("{b}B")
    } else {
        format!("{x:.1}{}", UNITS[u])
    }
}

impl fmt::Display for SpaceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |f: &mut fmt::Formatter<'_>, k: &str, v: u64| writeln!(f, "{k:<20}{:>12}  ({v} bytes)", human(v));
        row(f, "static data", self.static_bytes)?;
        row(f, "temporal data", self.temporal_bytes)?;
        row(f, "total size", self.total_bytes)?;
        row(f, "raw data size", self.raw_bytes)?;
        match self.temporal_ratio {
            Some(r) => writeln!(f, "{:<20}{r:>12.3}", "amplification ratio"),
            None => writeln!(f, "{:<20}{:>12}", "amplification ratio", "n/a"),
        }
    }
}
