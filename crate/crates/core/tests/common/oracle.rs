//! Brute-force reference models: a per-chronon value table and a
//! time-expanded earliest-arrival search.

#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use petg_core::graph::EntityId;
use petg_core::model::{TimeInterval, Value, ValueType};
use petg_core::schema::PropertySpec;
use petg_core::Database;
use rand::Rng;

/// One cell per chronon in `[0, horizon)`.
#[derive(Clone, Debug)]
pub struct ChrononTable {
    pub horizon: u64,
    pub cells: BTreeMap<EntityId, Vec<Option<Value>>>,
}

impl ChrononTable {
    pub fn new(horizon: u64) -> Self {
        ChrononTable { horizon, cells: BTreeMap::new() }
    }

    /// `end == None` means open-ended.
    pub fn set(&mut self, e: EntityId, start: u64, end: Option<u64>, v: Option<Value>) {
        let h = self.horizon as usize;
        let row = self.cells.entry(e).or_insert_with(|| vec![None; h]);
        let end = end.unwrap_or(self.horizon).min(self.horizon);
        for t in start.min(self.horizon)..end {
            row[t as usize] = v.clone();
        }
    }

    pub fn at(&self, e: EntityId, t: u64) -> Option<&Value> {
        self.cells.get(&e).and_then(|r| r[t as usize].as_ref())
    }

    fn window(&self, e: EntityId, a: u64, b: u64) -> impl Iterator<Item = (u64, &Value)> {
        let row = self.cells.get(&e);
        (a..b).filter_map(move |t| row.and_then(|r| r[t as usize].as_ref()).map(|v| (t, v)))
    }

    /// Maximal runs of equal values, as `(start, end, value)`.
    pub fn runs(&self, e: EntityId, a: u64, b: u64) -> Vec<(u64, u64, Value)> {
        let mut out: Vec<(u64, u64, Value)> = Vec::new();
        for (t, v) in self.window(e, a, b) {
            match out.last_mut() {
                Some(last) if last.1 == t && last.2 == *v => last.1 = t + 1,
                _ => out.push((t, t + 1, v.clone())),
            }
        }
        out
    }

    pub fn snapshot(&self, t: u64) -> BTreeMap<EntityId, Value> {
        self.cells
            .keys()
            .filter_map(|e| self.at(*e, t).map(|v| (*e, v.clone())))
            .collect()
    }

    pub fn max(&self, a: u64, b: u64) -> BTreeMap<EntityId, f64> {
        self.fold(a, b, |xs| xs.iter().cloned().fold(f64::MIN, f64::max))
    }

    pub fn min(&self, a: u64, b: u64) -> BTreeMap<EntityId, f64> {
        self.fold(a, b, |xs| xs.iter().cloned().fold(f64::MAX, f64::min))
    }

    pub fn mean(&self, a: u64, b: u64) -> BTreeMap<EntityId, f64> {
        self.fold(a, b, |xs| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    fn fold(&self, a: u64, b: u64, f: impl Fn(&[f64]) -> f64) -> BTreeMap<EntityId, f64> {
        let mut out = BTreeMap::new();
        for e in self.cells.keys() {
            let xs: Vec<f64> = self.window(*e, a, b).map(|(_, v)| v.as_f64().unwrap()).collect();
            if !xs.is_empty() {
                out.insert(*e, f(&xs));
            }
        }
        out
    }

    pub fn within(&self, a: u64, b: u64, lo: f64, hi: f64, every: bool) -> Vec<EntityId> {
        let ok = |t: u64, e: EntityId| match self.at(e, t) {
            Some(v) => (lo..=hi).contains(&v.as_f64().unwrap()),
            None => false,
        };
        self.cells
            .keys()
            .copied()
            .filter(|e| {
                if every {
                    (a..b).all(|t| ok(t, *e))
                } else {
                    (a..b).any(|t| ok(t, *e))
                }
            })
            .collect()
    }
}

/// Fills a fresh database with `entities` nodes carrying a random integer
/// property `prop`, mirroring every write in the returned table.
pub fn random_store(
    db: &Database,
    rng: &mut impl Rng,
    prop: &str,
    entities: usize,
    horizon: u64,
    writes: usize,
) -> ChrononTable {
    db.define_property(PropertySpec::new(prop, ValueType::Int)).unwrap();
    let mut table = ChrononTable::new(horizon);
    let mut ids = Vec::new();
    {
        let mut t = db.begin();
        for _ in 0..entities {
            ids.push(EntityId::Node(t.create_node(&["Sensor"]).unwrap()));
        }
        t.commit().unwrap();
    }
    let per_txn = 200;
    let mut done = 0;
    while done < writes {
        let mut t = db.begin();
        for _ in 0..per_txn.min(writes - done) {
            let e = ids[rng.gen_range(0..ids.len())];
            let s = rng.gen_range(0..horizon);
            let len = if rng.gen_bool(0.8) {
                rng.gen_range(1..=horizon / 20 + 1)
            } else {
                rng.gen_range(1..=horizon)
            };
            let end = if rng.gen_bool(0.02) { None } else { Some((s + len).min(horizon)) };
            let v = rng.gen_range(-50..=50i64);
            let iv = match end {
                Some(end) => TimeInterval::ticks(s, end).unwrap(),
                None => TimeInterval::ticks(s, u64::MAX).unwrap(),
            };
            t.set_tp(e, prop, iv, Value::Int(v)).unwrap();
            table.set(e, s, end, Some(Value::Int(v)));
            done += 1;
        }
        t.commit().unwrap();
    }
    table
}

/// An edge whose travel time at chronon `t` is `travel[t]`.
#[derive(Clone, Debug)]
pub struct TimedEdge {
    pub eid: u64,
    pub src: u64,
    pub dst: u64,
    pub travel: Vec<Option<u64>>,
}

/// Builds a random road network with piecewise travel times. Some segments
/// carry fractional values, which count as the next whole chronon.
pub fn random_road_graph(
    db: &Database,
    rng: &mut impl Rng,
    prop: &str,
    max_nodes: usize,
    max_edges: usize,
    max_segments: usize,
    horizon: u64,
) -> (Vec<u64>, Vec<TimedEdge>) {
    db.define_property(PropertySpec::new(prop, ValueType::Float)).unwrap();
    let n = rng.gen_range(2..=max_nodes);
    let m = rng.gen_range(1..=max_edges);
    let mut t = db.begin();
    let nodes: Vec<u64> = (0..n).map(|_| t.create_node(&["Intersection"]).unwrap()).collect();
    let mut edges = Vec::new();
    for _ in 0..m {
        let src = nodes[rng.gen_range(0..n)];
        let dst = nodes[rng.gen_range(0..n)];
        let eid = t.create_edge(src, dst, &["Road"]).unwrap();
        let mut travel = vec![None; horizon as usize];
        let segs = rng.gen_range(0..=max_segments);
        let mut cuts: Vec<u64> = (0..segs).map(|_| rng.gen_range(0..horizon)).collect();
        cuts.push(0);
        cuts.push(horizon);
        cuts.sort_unstable();
        cuts.dedup();
        for w in cuts.windows(2) {
            if rng.gen_bool(0.15) {
                continue;
            }
            let raw = if rng.gen_bool(0.3) {
                rng.gen_range(0.0..40.0f64)
            } else {
                rng.gen_range(0..40u64) as f64
            };
            let iv = TimeInterval::ticks(w[0], w[1]).unwrap();
            t.set_tp(EntityId::Edge(eid), prop, iv, Value::Float(raw)).unwrap();
            for c in w[0]..w[1] {
                travel[c as usize] = Some(raw.ceil() as u64);
            }
        }
        edges.push(TimedEdge { eid, src, dst, travel });
    }
    t.commit().unwrap();
    (nodes, edges)
}

/// Dijkstra over states `(node, chronon)` with unit waits and timed hops.
/// Only states before `t_max` are expanded; arrivals at or after `t_max`
/// are dropped.
pub fn time_expanded_earliest(edges: &[TimedEdge], vs: u64, ts: u64, t_max: u64) -> BTreeMap<u64, u64> {
    let mut out_edges: BTreeMap<u64, Vec<&TimedEdge>> = BTreeMap::new();
    for e in edges {
        out_edges.entry(e.src).or_default().push(e);
    }
    let mut heap = BinaryHeap::new();
    let mut seen = std::collections::HashSet::new();
    let mut best: BTreeMap<u64, u64> = BTreeMap::new();
    heap.push(Reverse((ts, vs)));
    while let Some(Reverse((t, v))) = heap.pop() {
        if t >= t_max || !seen.insert((v, t)) {
            continue;
        }
        best.entry(v).or_insert(t);
        heap.push(Reverse((t + 1, v)));
        for e in out_edges.get(&v).into_iter().flatten() {
            if let Some(Some(d)) = e.travel.get(t as usize) {
                heap.push(Reverse((t + d, e.dst)));
            }
        }
    }
    best
}
