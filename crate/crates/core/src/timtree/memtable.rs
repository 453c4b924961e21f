use std::collections::BTreeMap;

use crate::graph::EntityId;
use crate::model::{TimeInterval, TimeIntervalSeries, Value};

/// Per-entity overlay series; `None` entries are explicit gaps that shadow
/// older layers.
pub(crate) type Overlay = TimeIntervalSeries<Option<Value>>;

/// Sorted in-memory buffer for one property. Used both as the Global
/// Memtable (one per property, bounded collectively) and as the Local
/// Memtable attached to a disk chunk.
#[derive(Clone, Debug, Default)]
pub(crate) struct Memtable {
    series: BTreeMap<EntityId, Overlay>,
    bytes: usize,
}

fn entry_bytes(v: &Option<Value>) -> usize {
    // interval + tag + payload + per-entry bookkeeping
    16 + v.as_ref().map_or(1, Value::footprint) + 8
}

impl Memtable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn entry_count(&self) -> usize {
        self.series.values().map(|s| s.len()).sum()
    }

    pub fn write(&mut self, e: EntityId, iv: TimeInterval, v: Option<Value>) {
        let s = self.series.entry(e).or_default();
        let before = series_bytes_fast(s);
        s.overwrite(iv, v);
        let after = series_bytes_fast(s);
        self.bytes = (self.bytes + after).saturating_sub(before);
    }

    /// Overlays a whole series for `e` (later writes win).
    pub fn write_series(&mut self, e: EntityId, top: &Overlay) {
        for (iv, v) in top.entries() {
            self.write(e, *iv, v.clone());
        }
    }

    pub fn get(&self, e: EntityId) -> Option<&Overlay> {
        self.series.get(&e)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EntityId, &Overlay)> {
        self.series.iter()
    }

    /// `self` overlaid by `top`.
    pub fn overlaid_by(mut self, top: &Memtable) -> Memtable {
        for (e, s) in top.iter() {
            self.write_series(*e, s);
        }
        self
    }

    #[cfg(test)]
    pub fn recount(&mut self) {
        self.series.retain(|_, s| !s.is_empty());
        self.bytes = self.series.values().map(series_bytes_fast).sum();
    }
}

// Byte accounting only needs to be approximate; counting entries keeps
// updates O(log n) instead of rescanning the series.
fn series_bytes_fast(s: &Overlay) -> usize {
    let n = s.len();
    match s.last() {
        Some((_, v)) => n * entry_bytes(v),
        None => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: u64, e: u64) -> TimeInterval {
        TimeInterval::ticks(s, e).unwrap()
    }

    #[test]
    fn overwrites_coalesce_and_track_size() {
        let mut m = Memtable::new();
        let e = EntityId::Node(1);
        m.write(e, iv(0, 10), Some(Value::Int(1)));
        m.write(e, iv(10, 20), Some(Value::Int(1)));
        assert_eq!(m.get(e).unwrap().len(), 1);
        let one = m.bytes();
        m.write(e, iv(5, 7), None);
        assert_eq!(m.get(e).unwrap().len(), 3);
        assert!(m.bytes() > one);
        m.recount();
        assert_eq!(m.bytes(), 3 * 40);
    }
}
