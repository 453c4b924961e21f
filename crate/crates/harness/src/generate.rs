//! Synthetic graph generator writing the nodes/edges/events CSV triple.
//!
//! Edges join uniformly random node pairs. Each (entity, property) series
//! receives events at Poisson times; an event changes the previous value
//! with probability `non_redundancy` and repeats it otherwise.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

pub const NODES_FILE: &str = "nodes.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const EVENTS_FILE: &str = "events.csv";

const VALUES: i64 = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub nodes: u64,
    pub edges: u64,
    /// Temporal properties per node.
    pub node_properties: u32,
    /// Temporal properties per edge.
    pub edge_properties: u32,
    pub events: u64,
    /// Probability that an event changes the value, in (0, 1].
    pub non_redundancy: f64,
    /// Mean chronons between two events of one series.
    pub mean_gap: f64,
    /// Length of a chronon in seconds; recorded for ingest.
    pub chronon_secs: u64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            nodes: 1000,
            edges: 4000,
            node_properties: 1,
            edge_properties: 1,
            events: 100_000,
            non_redundancy: 0.4,
            mean_gap: 10.0,
            chronon_secs: 60,
            seed: 1,
        }
    }
}

/// Name of the `j`-th temporal property of nodes or edges.
pub fn property_name(edge: bool, j: u32) -> String {
    if edge {
        format!("e{j}")
    } else {
        format!("n{j}")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GenerateReport {
    pub nodes: u64,
    pub edges: u64,
    pub events: u64,
    /// Events that are not the first of their series.
    pub updates: u64,
    /// Updates whose value differs from the previous one.
    pub changes: u64,
}

impl GenerateReport {
    pub fn change_fraction(&self) -> f64 {
        if self.updates == 0 {
            0.0
        } else {
            self.changes as f64 / self.updates as f64
        }
    }
}

#[derive(Serialize)]
struct NodeRow<'a> {
    vid: u64,
    labels: &'a str,
    props_json: String,
}

#[derive(Serialize)]
struct EdgeRow<'a> {
    eid: u64,
    src: u64,
    dst: u64,
    labels: &'a str,
    props_json: String,
}

struct Event {
    start: u64,
    series: u32,
    end: Option<u64>,
    value: i64,
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<GenerateReport> {
    ensure!(
        spec.non_redundancy > 0.0 && spec.non_redundancy <= 1.0,
        "non_redundancy must be in (0, 1]"
    );
    ensure!(spec.nodes > 0, "need at least one node");
    ensure!(spec.mean_gap >= 1.0, "mean_gap must be at least one chronon");
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut report = GenerateReport {
        nodes: spec.nodes,
        edges: spec.edges,
        ..Default::default()
    };

    let mut w = writer(&out_dir.join(NODES_FILE))?;
    for vid in 0..spec.nodes {
        w.serialize(NodeRow {
            vid,
            labels: "Intersection",
            props_json: serde_json::json!({ "name": format!("n{vid}") }).to_string(),
        })?;
    }
    w.flush()?;

    let mut w = writer(&out_dir.join(EDGES_FILE))?;
    for eid in 0..spec.edges {
        w.serialize(EdgeRow {
            eid,
            src: rng.gen_range(0..spec.nodes),
            dst: rng.gen_range(0..spec.nodes),
            labels: "Road",
            props_json: serde_json::json!({ "name": format!("road {eid}") }).to_string(),
        })?;
    }
    w.flush()?;

    // Series are (entity, property) pairs: all node series, then edge series.
    let node_series = spec.nodes * u64::from(spec.node_properties);
    let edge_series = spec.edges * u64::from(spec.edge_properties);
    let series = node_series + edge_series;
    ensure!(series > 0 || spec.events == 0, "events need at least one temporal property");
    ensure!(series <= u64::from(u32::MAX), "too many series");
    let describe = |s: u64| -> (&'static str, u64, String) {
        if s < node_series {
            let per = u64::from(spec.node_properties);
            ("node", s / per, property_name(false, (s % per) as u32))
        } else {
            let s = s - node_series;
            let per = u64::from(spec.edge_properties);
            ("edge", s / per, property_name(true, (s % per) as u32))
        }
    };

    let gap = Exp::new(1.0 / spec.mean_gap)?;
    let mut events = Vec::with_capacity(spec.events as usize);
    for s in 0..series {
        let n = spec.events / series + u64::from(s < spec.events % series);
        if n == 0 {
            continue;
        }
        let mut t = rng.gen_range(0..spec.mean_gap.ceil() as u64);
        let mut value = rng.gen_range(0..VALUES);
        let first = events.len();
        for k in 0..n {
            if k > 0 {
                t += (gap.sample(&mut rng).round() as u64).max(1);
                report.updates += 1;
                if rng.gen_bool(spec.non_redundancy) {
                    value = (value + rng.gen_range(1..VALUES)) % VALUES;
                    report.changes += 1;
                }
            }
            events.push(Event {
                start: t,
                series: s as u32,
                end: None,
                value,
            });
        }
        for i in first..events.len() - 1 {
            events[i].end = Some(events[i + 1].start);
        }
    }
    events.sort_by_key(|e| (e.start, e.series));

    let mut w = writer(&out_dir.join(EVENTS_FILE))?;
    w.write_record(["entity_kind", "entity_id", "property", "start_tick", "end_tick", "value"])?;
    for e in &events {
        let (kind, id, prop) = describe(u64::from(e.series));
        let end = e.end.map_or_else(|| "NOW".to_owned(), |t| t.to_string());
        w.write_record([kind, &id.to_string(), &prop, &e.start.to_string(), &end, &e.value.to_string()])?;
    }
    w.flush()?;
    report.events = events.len() as u64;
    Ok(report)
}
