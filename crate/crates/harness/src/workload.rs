//! Mixed read/write request streams run against a populated database.
//!
//! Every operation targets one temporal property (`travel_property`). A hot
//! subset of its entities receives appends at the tail of their series and a
//! `hot_share` of the entity-level requests; everything else addresses
//! chronons before the hot set's earliest tail, so concurrent appends only
//! ever meet other requests on the entity, never on the same interval.

use std::collections::BTreeMap;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use petg_core::graph::EntityId;
use petg_core::model::{Chronon, TimeInterval, Value, ValueType};
use petg_core::query::{
    q_append, q_entity_history, q_etpc, q_gatp, q_reachable_area, q_snapshot, q_update, Aggregate, Quantifier,
};
use petg_core::schema::PropertyDef;
use petg_core::{Database, Error};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::report::StatsSummary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Append,
    Update,
    EntityHistory,
    Snapshot,
    Gatp,
    Etpc,
    Reachable,
}

impl OpKind {
    pub const ALL: [OpKind; 7] = [
        OpKind::Append,
        OpKind::Update,
        OpKind::EntityHistory,
        OpKind::Snapshot,
        OpKind::Gatp,
        OpKind::Etpc,
        OpKind::Reachable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Append => "append",
            OpKind::Update => "update",
            OpKind::EntityHistory => "entity_history",
            OpKind::Snapshot => "snapshot",
            OpKind::Gatp => "gatp",
            OpKind::Etpc => "etpc",
            OpKind::Reachable => "reachable",
        }
    }

    pub fn from_name(s: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|op| op.name() == s)
    }

    pub fn is_write(self) -> bool {
        matches!(self, OpKind::Append | OpKind::Update)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    /// Fraction of requests per operation, indexed by `OpKind as usize`.
    pub mix: [f64; 7],
    pub requests: u64,
    pub concurrency: usize,
    pub seed: u64,
    /// Pause before retrying a transaction aborted by deadlock detection.
    pub retry_ms: u64,
    /// Fraction of the entities forming the hot set.
    pub hot_fraction: f64,
    /// Fraction of entity-level reads and updates aimed at the hot set.
    pub hot_share: f64,
    /// Items written by one append.
    pub append_items: usize,
    pub travel_property: String,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            mix: [0.40, 0.05, 0.35, 0.05, 0.05, 0.05, 0.05],
            requests: 10_000,
            concurrency: 8,
            seed: 1,
            retry_ms: 50,
            hot_fraction: 0.05,
            hot_share: 0.5,
            append_items: 4,
            travel_property: "e0".into(),
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.mix.iter().sum();
        ensure!(self.mix.iter().all(|f| *f >= 0.0), "mix fractions must be non-negative");
        ensure!((sum - 1.0).abs() < 1e-9, "mix fractions sum to {sum}, not 1");
        ensure!(self.concurrency >= 1, "concurrency must be at least 1");
        ensure!(
            (0.0..=1.0).contains(&self.hot_fraction) && (0.0..=1.0).contains(&self.hot_share),
            "hot_fraction and hot_share must lie in [0, 1]"
        );
        ensure!(self.append_items >= 1, "append_items must be at least 1");
        Ok(())
    }

    /// Same spec with only read operations, weighted as in this mix.
    pub fn reads_only(&self) -> WorkloadSpec {
        let mut s = self.clone();
        for op in OpKind::ALL.into_iter().filter(|op| op.is_write()) {
            s.mix[op as usize] = 0.0;
        }
        let sum: f64 = s.mix.iter().sum();
        s.mix.iter_mut().for_each(|f| *f /= sum);
        s
    }
}

/// Length in chronons of read and update windows.
const WINDOW: u64 = 60;
/// Horizon of reachable-area requests.
const REACH_DUR: u64 = 30;
/// Range of values written by updates and appends.
const VALUES: i64 = 1000;

/// One generated request. Entity and node fields index into the
/// [`Universe`]; append intervals are placed at run time after the tail.
#[derive(Clone, Debug, PartialEq)]
pub enum Request {
    Append { entity: usize, items: Vec<(u64, i64)> },
    Update { entity: usize, start: u64, len: u64, value: i64 },
    EntityHistory { entity: usize, start: u64, len: u64 },
    Snapshot { at: u64 },
    Gatp { start: u64, len: u64 },
    Etpc { start: u64, len: u64, lo: i64, hi: i64 },
    Reachable { node: usize, at: u64, dur: u64 },
}

impl Request {
    pub fn kind(&self) -> OpKind {
        match self {
            Request::Append { .. } => OpKind::Append,
            Request::Update { .. } => OpKind::Update,
            Request::EntityHistory { .. } => OpKind::EntityHistory,
            Request::Snapshot { .. } => OpKind::Snapshot,
            Request::Gatp { .. } => OpKind::Gatp,
            Request::Etpc { .. } => OpKind::Etpc,
            Request::Reachable { .. } => OpKind::Reachable,
        }
    }
}

/// What the request generator needs to know about the database.
#[derive(Clone, Debug)]
pub struct Universe {
    pub property: PropertyDef,
    pub entities: Vec<EntityId>,
    /// Latest stored chronon of each entity's series when scanned.
    pub tails: Vec<u64>,
    pub nodes: Vec<u64>,
    /// Indices into `entities`; receives every append.
    pub hot: Vec<usize>,
    /// Earliest tail over the hot set; reads and updates stay below it.
    pub horizon: u64,
}

impl Universe {
    pub fn scan(db: &Database, spec: &WorkloadSpec) -> Result<Universe> {
        let property = db
            .property(&spec.travel_property)
            .with_context(|| format!("no temporal property `{}`", spec.travel_property))?;
        let txn = db.begin();
        let mut entities = Vec::new();
        let mut tails = Vec::new();
        for e in txn.entities_with(property.id)? {
            if let Some((iv, _)) = txn.latest(e, property.id)? {
                entities.push(e);
                tails.push(if iv.is_open() { iv.start().tick() } else { iv.end().tick() - 1 });
            }
        }
        let nodes = txn.get_nodes(&[] as &[&str])?;
        ensure!(!entities.is_empty(), "no entity carries `{}`", spec.travel_property);
        ensure!(!nodes.is_empty(), "the graph has no nodes");

        let mut order: Vec<usize> = (0..entities.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
        let n_hot = ((entities.len() as f64 * spec.hot_fraction).ceil() as usize).clamp(1, entities.len());
        let mut hot = order[..n_hot].to_vec();
        hot.sort_unstable();
        let horizon = hot.iter().map(|&i| tails[i]).min().unwrap_or(0).max(1);
        Ok(Universe {
            property,
            entities,
            tails,
            nodes,
            hot,
            horizon,
        })
    }

    fn value(&self, v: i64) -> Value {
        match self.property.value_type {
            ValueType::Float => Value::Float(v as f64),
            _ => Value::Int(v),
        }
    }

    /// Start and length of a window ending at or before `limit`.
    fn window(rng: &mut ChaCha8Rng, limit: u64) -> (u64, u64) {
        let len = WINDOW.min(limit).max(1);
        let start = rng.gen_range(0..=limit.saturating_sub(len));
        (start, len)
    }

    fn pick_entity(&self, rng: &mut ChaCha8Rng, spec: &WorkloadSpec) -> usize {
        if rng.gen_bool(spec.hot_share) {
            self.hot[rng.gen_range(0..self.hot.len())]
        } else {
            rng.gen_range(0..self.entities.len())
        }
    }

    /// The hot entity appended to by request `i`. With at least as many hot
    /// entities as workers, every entity is appended to by one worker only.
    fn append_target(&self, rng: &mut ChaCha8Rng, i: u64, workers: usize) -> usize {
        let w = (i % workers as u64) as usize;
        let owned = self.hot.len().saturating_sub(w).div_ceil(workers);
        if owned == 0 {
            return self.hot[w % self.hot.len()];
        }
        self.hot[w + workers * rng.gen_range(0..owned)]
    }

    /// The request stream determined by `spec.seed`.
    pub fn requests(&self, spec: &WorkloadSpec) -> Vec<Request> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
        let mut cumulative = [0.0; 7];
        let mut acc = 0.0;
        for (c, f) in cumulative.iter_mut().zip(spec.mix) {
            acc += f;
            *c = acc;
        }
        let limit = self.horizon;
        (0..spec.requests)
            .map(|i| {
                let u: f64 = rng.gen();
                let k = cumulative.iter().position(|c| u < *c).unwrap_or_else(|| {
                    spec.mix.iter().rposition(|f| *f > 0.0).unwrap_or(0)
                });
                match OpKind::ALL[k] {
                    OpKind::Append => Request::Append {
                        entity: self.append_target(&mut rng, i, spec.concurrency),
                        items: (0..spec.append_items)
                            .map(|_| (rng.gen_range(1..=5), rng.gen_range(0..VALUES)))
                            .collect(),
                    },
                    OpKind::Update => {
                        let entity = self.pick_entity(&mut rng, spec);
                        let (start, len) = Self::window(&mut rng, self.tails[entity].min(limit));
                        Request::Update {
                            entity,
                            start,
                            len: rng.gen_range(1..=len),
                            value: rng.gen_range(0..VALUES),
                        }
                    }
                    OpKind::EntityHistory => {
                        let entity = self.pick_entity(&mut rng, spec);
                        let (start, len) = Self::window(&mut rng, limit);
                        Request::EntityHistory { entity, start, len }
                    }
                    OpKind::Snapshot => Request::Snapshot {
                        at: rng.gen_range(0..limit),
                    },
                    OpKind::Gatp => {
                        let (start, len) = Self::window(&mut rng, limit);
                        Request::Gatp { start, len }
                    }
                    OpKind::Etpc => {
                        let (start, len) = Self::window(&mut rng, limit);
                        let lo = rng.gen_range(0..VALUES);
                        Request::Etpc {
                            start,
                            len,
                            lo,
                            hi: (lo + VALUES / 10).min(VALUES),
                        }
                    }
                    OpKind::Reachable => Request::Reachable {
                        node: rng.gen_range(0..self.nodes.len()),
                        at: rng.gen_range(0..limit.saturating_sub(REACH_DUR).max(1)),
                        dur: REACH_DUR,
                    },
                }
            })
            .collect()
    }

    fn run_one(&self, db: &Database, req: &Request) -> petg_core::Result<()> {
        let tp = self.property.name.as_str();
        let iv = |s: u64, len: u64| TimeInterval::ticks(s, s + len);
        let mut txn = db.begin();
        let out = (|| -> petg_core::Result<()> {
            match req {
                Request::Append { entity, items } => {
                    let e = self.entities[*entity];
                    let mut t = match txn.latest(e, self.property.id)? {
                        Some((last, _)) if last.is_open() => last.start().tick() + 1,
                        Some((last, _)) => last.end().tick(),
                        None => 0,
                    };
                    // The last item stays open, like the tail of a live feed.
                    let mut batch = Vec::with_capacity(items.len());
                    for (i, &(w, v)) in items.iter().enumerate() {
                        let span = if i + 1 == items.len() {
                            TimeInterval::since(Chronon::from_raw(t))?
                        } else {
                            iv(t, w)?
                        };
                        batch.push((span, self.value(v)));
                        t += w;
                    }
                    q_append(&mut txn, e, tp, &batch)
                }
                Request::Update {
                    entity,
                    start,
                    len,
                    value,
                } => q_update(&mut txn, self.entities[*entity], tp, iv(*start, *len)?, self.value(*value)),
                Request::EntityHistory { entity, start, len } => {
                    q_entity_history(&txn, self.entities[*entity], tp, iv(*start, *len)?).map(drop)
                }
                Request::Snapshot { at } => q_snapshot(&txn, tp, Chronon::from_raw(*at)).map(drop),
                Request::Gatp { start, len } => q_gatp(&txn, tp, iv(*start, *len)?, &Aggregate::Max).map(drop),
                Request::Etpc { start, len, lo, hi } => q_etpc(
                    &txn,
                    tp,
                    iv(*start, *len)?,
                    &self.value(*lo),
                    &self.value(*hi),
                    Quantifier::Exists,
                )
                .map(drop),
                Request::Reachable { node, at, dur } => {
                    q_reachable_area(&txn, self.nodes[*node], Chronon::from_raw(*at), *dur, tp).map(drop)
                }
            }
        })();
        match out {
            Ok(()) => txn.commit(),
            Err(e) => {
                let _ = txn.abort();
                Err(e)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OpReport {
    pub count: u64,
    pub committed: u64,
    pub failures: u64,
    pub retries: u64,
    pub p50_ms: f64,
    pub p90_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WorkloadReport {
    pub requests: u64,
    pub concurrency: usize,
    pub coarse_lock_mode: bool,
    pub elapsed_secs: f64,
    /// Committed transactions per second.
    pub throughput: f64,
    pub retries: u64,
    pub failures: u64,
    pub deadlocks: u64,
    pub lock_waits: u64,
    pub ops: BTreeMap<String, OpReport>,
    /// First few failure messages.
    pub errors: Vec<String>,
    pub tp_stats: StatsSummary,
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[derive(Default)]
struct WorkerLog {
    samples: Vec<(OpKind, f64, u64, bool)>,
    errors: Vec<String>,
}

fn retryable(e: &Error) -> bool {
    e.is_deadlock() || matches!(e, Error::AppendOrder(_))
}

/// Attempts before a retryable request is recorded as failed.
const MAX_ATTEMPTS: u64 = 1000;

/// Runs the stream with one thread per concurrency slot. Request `i` goes to
/// worker `i mod concurrency`. Latency runs from the first `begin` to the
/// successful commit, retries included.
pub fn run_workload(db: &Database, spec: &WorkloadSpec) -> Result<WorkloadReport> {
    spec.validate()?;
    let universe = Universe::scan(db, spec)?;
    let requests = universe.requests(spec);
    let before = db.counters();
    let workers = spec.concurrency;
    let retry = Duration::from_millis(spec.retry_ms);
    let started = Instant::now();
    let logs: Vec<WorkerLog> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (universe, requests) = (&universe, &requests);
                s.spawn(move || {
                    let mut log = WorkerLog::default();
                    for req in requests.iter().skip(w).step_by(workers) {
                        let t0 = Instant::now();
                        let mut retries = 0;
                        let ok = loop {
                            match universe.run_one(db, req) {
                                Ok(()) => break true,
                                Err(e) if retryable(&e) && retries + 1 < MAX_ATTEMPTS => {
                                    retries += 1;
                                    thread::sleep(retry);
                                }
                                Err(e) => {
                                    if log.errors.len() < 8 {
                                        log.errors.push(format!("{}: {e}", req.kind().name()));
                                    }
                                    break false;
                                }
                            }
                        };
                        log.samples.push((req.kind(), t0.elapsed().as_secs_f64() * 1e3, retries, ok));
                    }
                    log
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("workload worker panicked")).collect()
    });
    let elapsed = started.elapsed().as_secs_f64();
    let after = db.counters();

    let mut latencies: BTreeMap<OpKind, Vec<f64>> = BTreeMap::new();
    let mut ops: BTreeMap<OpKind, OpReport> = BTreeMap::new();
    let mut errors = Vec::new();
    for log in logs {
        for (op, ms, retries, ok) in log.samples {
            let r = ops.entry(op).or_default();
            r.count += 1;
            r.retries += retries;
            if ok {
                r.committed += 1;
                latencies.entry(op).or_default().push(ms);
            } else {
                r.failures += 1;
            }
        }
        errors.extend(log.errors);
    }
    for (op, r) in ops.iter_mut() {
        if let Some(l) = latencies.get_mut(op) {
            l.sort_by(f64::total_cmp);
            r.p50_ms = percentile(l, 0.5);
            r.p90_ms = percentile(l, 0.9);
        }
    }
    let committed: u64 = ops.values().map(|r| r.committed).sum();
    Ok(WorkloadReport {
        requests: spec.requests,
        concurrency: workers,
        coarse_lock_mode: db.config().coarse_lock_mode,
        elapsed_secs: elapsed,
        throughput: if elapsed > 0.0 { committed as f64 / elapsed } else { 0.0 },
        retries: ops.values().map(|r| r.retries).sum(),
        failures: ops.values().map(|r| r.failures).sum(),
        deadlocks: after.deadlocks - before.deadlocks,
        lock_waits: after.lock_waits - before.lock_waits,
        ops: ops.into_iter().map(|(k, v)| (k.name().to_owned(), v)).collect(),
        errors,
        tp_stats: StatsSummary::from(&db.stats()),
    })
}

/// Recursively copies a closed database directory, for paired runs that
/// must start from identical contents.
pub fn copy_db(src: &Path, dst: &Path) -> Result<()> {
    if !src.is_dir() {
        bail!("{} is not a directory", src.display());
    }
    std::fs::create_dir_all(dst)?;
    for entry in std::fs::read_dir(src)? {
        let entry = entry?;
        let to = dst.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_db(&entry.path(), &to)?;
        } else {
            std::fs::copy(entry.path(), &to)?;
        }
    }
    Ok(())
}
