//! Randomized crash-point testing.
//!
//! Each trial runs a seeded single-threaded workload twice: once to count
//! the physical writes it performs, then with an [`IoGate`] that dies at a
//! random one of them, optionally tearing it. The directory is reopened and
//! compared with a model holding exactly the transactions whose commit
//! returned `Ok`; a second reopen must reproduce the first one's state.
//!
//! Commits do not fsync here. With fsync a crash during the flush leaves a
//! commit record on disk for a call that reported failure, and the model
//! could not tell which outcome to expect.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use anyhow::Result;
use petg_core::graph::EntityId;
use petg_core::io::IoGate;
use petg_core::model::{Chronon, TimeInterval, Value, ValueType};
use petg_core::schema::PropertySpec;
use petg_core::timtree::TimConfig;
use petg_core::{Database, DbConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Last modelled chronon; it also stands for every later one.
const HORIZON: u64 = 120;
const PROPERTY: &str = "level";

#[derive(Clone, Debug)]
pub struct CrashSpec {
    pub trials: u64,
    pub txns_per_trial: u64,
    pub seed: u64,
}

impl Default for CrashSpec {
    fn default() -> Self {
        CrashSpec {
            trials: 100,
            txns_per_trial: 40,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CrashReport {
    pub trials: u64,
    /// Trials whose crash point fell before the workload finished.
    pub crashed: u64,
    pub committed_txns: u64,
    /// Commits the crash prevented, against the uncrashed run.
    pub lost_txns: u64,
    pub violations: u64,
    pub details: Vec<String>,
}

/// Small memtables and frequent checkpoints, so crashes land in flushes and
/// checkpoints as well as log appends.
pub fn crash_config() -> DbConfig {
    DbConfig {
        tim: TimConfig {
            global_memtable_bytes: 2048,
            local_memtable_bytes: 1024,
            block_bytes: 256,
            compression_on: false,
            background_merge: false,
        },
        checkpoint_interval: 5,
        coarse_lock_mode: false,
        fsync_on_commit: false,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Model {
    nodes: BTreeMap<u64, BTreeMap<String, Value>>,
    edges: BTreeMap<u64, (u64, u64)>,
    /// Value per chronon `0..=HORIZON` for every written node.
    series: BTreeMap<u64, Vec<Option<i64>>>,
}

impl Model {
    fn write(&mut self, vid: u64, start: u64, end: Option<u64>, v: i64) {
        let cells = self.series.entry(vid).or_insert_with(|| vec![None; HORIZON as usize + 1]);
        let end = end.unwrap_or(HORIZON + 1);
        for c in &mut cells[start as usize..end as usize] {
            *c = Some(v);
        }
    }

    fn read(db: &Database) -> Result<Model> {
        let t = db.begin();
        let mut m = Model::default();
        let defined = db.property(PROPERTY).is_some();
        for vid in t.get_nodes(&[] as &[&str])? {
            m.nodes.insert(vid, t.props(EntityId::Node(vid))?);
            if !defined {
                continue;
            }
            let s = t.get_tp(EntityId::Node(vid), PROPERTY, TimeInterval::ALL)?;
            if !s.is_empty() {
                let cells = (0..=HORIZON)
                    .map(|c| Ok(s.value_at(Chronon::from_raw(c))?.and_then(Value::as_i64)))
                    .collect::<Result<Vec<_>>>()?;
                m.series.insert(vid, cells);
            }
        }
        for eid in t.get_edges(&[] as &[&str])? {
            m.edges.insert(eid, t.endpoints(eid)?);
        }
        Ok(m)
    }

    fn diff(&self, got: &Model) -> Vec<String> {
        let mut out = Vec::new();
        let ids: BTreeSet<u64> = self.nodes.keys().chain(got.nodes.keys()).copied().collect();
        for vid in ids {
            match (self.nodes.get(&vid), got.nodes.get(&vid)) {
                (Some(_), None) => out.push(format!("committed node {vid} missing")),
                (None, Some(_)) => out.push(format!("uncommitted node {vid} present")),
                (Some(a), Some(b)) if a != b => out.push(format!("node {vid} props {b:?}, expected {a:?}")),
                _ => {}
            }
            let empty = Vec::new();
            let (a, b) = (self.series.get(&vid).unwrap_or(&empty), got.series.get(&vid).unwrap_or(&empty));
            if a != b {
                out.push(format!("node {vid} series differs"));
            }
        }
        if self.edges != got.edges {
            out.push(format!("edges {:?}, expected {:?}", got.edges, self.edges));
        }
        out
    }
}

/// Runs the seeded workload until it finishes or the gate dies. Returns the
/// model of acknowledged commits and the number of them.
fn workload(dir: &Path, gate: Arc<IoGate>, seed: u64, txns: u64) -> Result<(Model, u64)> {
    let db = Database::open_with_gate(dir, crash_config(), gate.clone())?;
    let mut model = Model::default();
    let mut committed = 0;
    if db.define_property(PropertySpec::new(PROPERTY, ValueType::Int)).is_err() {
        return Ok((model, 0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..txns {
        if gate.has_crashed() {
            break;
        }
        let mut next = model.clone();
        let mut t = db.begin();
        let mut ok = true;
        let mut touched: Vec<u64> = model.nodes.keys().copied().collect();
        for _ in 0..rng.gen_range(1..=4) {
            let step: Result<()> = (|| {
                match rng.gen_range(0..10) {
                    0..=2 => {
                        let vid = t.create_node(&["Sensor"])?;
                        next.nodes.insert(vid, BTreeMap::new());
                        touched.push(vid);
                    }
                    3 if touched.len() >= 2 => {
                        let (a, b) = (touched[rng.gen_range(0..touched.len())], touched[rng.gen_range(0..touched.len())]);
                        let eid = t.create_edge(a, b, &["Link"])?;
                        next.edges.insert(eid, (a, b));
                    }
                    4 if !touched.is_empty() => {
                        let vid = touched[rng.gen_range(0..touched.len())];
                        let v = Value::Int(rng.gen_range(0..100));
                        t.set_prop(EntityId::Node(vid), "tag", v.clone())?;
                        next.nodes.get_mut(&vid).expect("tracked node").insert("tag".into(), v);
                    }
                    _ if !touched.is_empty() => {
                        let vid = touched[rng.gen_range(0..touched.len())];
                        let start = rng.gen_range(0..HORIZON);
                        let end = if rng.gen_bool(0.1) {
                            None
                        } else {
                            Some(rng.gen_range(start + 1..=HORIZON))
                        };
                        let v = rng.gen_range(0..50);
                        let iv = match end {
                            Some(e) => TimeInterval::ticks(start, e)?,
                            None => TimeInterval::since(Chronon::from_raw(start))?,
                        };
                        t.set_tp(EntityId::Node(vid), PROPERTY, iv, Value::Int(v))?;
                        next.write(vid, start, end, v);
                    }
                    _ => {}
                }
                Ok(())
            })();
            if step.is_err() {
                ok = false;
                break;
            }
        }
        if !ok || rng.gen_bool(0.15) {
            let _ = t.abort();
            continue;
        }
        if t.commit().is_ok() {
            model = next;
            committed += 1;
        }
    }
    Ok((model, committed))
}

/// One crash trial. Returns (crashed, committed, committed without a crash, violations).
fn trial(seed: u64, txns: u64) -> Result<(bool, u64, u64, Vec<String>)> {
    let probe = tempfile::tempdir()?;
    let dry = Arc::new(IoGate::unlimited());
    let (_, all) = workload(probe.path(), dry.clone(), seed, txns)?;
    let writes = dry.admitted();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
    let k = rng.gen_range(0..writes.max(1));
    let torn = if rng.gen_bool(0.5) { rng.gen_range(1..24) } else { 0 };
    let dir = tempfile::tempdir()?;
    let gate = Arc::new(IoGate::crash_after(k, torn));
    let (model, committed) = workload(dir.path(), gate.clone(), seed, txns)?;
    let crashed = gate.has_crashed();

    let mut violations = Vec::new();
    let first = Database::open(dir.path(), crash_config())?;
    let (got, image) = (Model::read(&first)?, first.state_image()?);
    violations.extend(model.diff(&got).into_iter().map(|d| format!("seed {seed}, crash at write {k}: {d}")));
    drop(first);
    let second = Database::open(dir.path(), crash_config())?;
    if second.state_image()? != image {
        violations.push(format!("seed {seed}: second recovery changed the state"));
    }
    if !crashed && committed != all {
        violations.push(format!("seed {seed}: uncrashed run committed {committed} of {all}"));
    }
    Ok((crashed, committed, all, violations))
}

pub fn recover_check(spec: &CrashSpec) -> Result<CrashReport> {
    let mut report = CrashReport::default();
    for i in 0..spec.trials {
        let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(i);
        let (crashed, committed, all, violations) = trial(seed, spec.txns_per_trial)?;
        report.trials += 1;
        report.crashed += u64::from(crashed);
        report.committed_txns += committed;
        report.lost_txns += all.saturating_sub(committed);
        report.violations += violations.len() as u64;
        report.details.extend(violations);
    }
    report.details.truncate(20);
    Ok(report)
}
