//! Database handle: graph store, TIM-Tree, lock manager and log, plus
//! startup recovery and checkpoints.
//!
//! Directory layout:
//!
//! ```text
//! wal.log          write-ahead log
//! graph.<k>.rec    record file written by checkpoint k
//! buffer.<k>.buf   Buffer File written by checkpoint k
//! tim/             Metadata File and chunk files
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard};

use crate::error::Result;
use crate::graph::{record_file, EntityId, GraphStore};
use crate::io::IoGate;
use crate::model::{TimeInterval, TimeIntervalSeries};
use crate::schema::{PropertyDef, PropertySpec};
use crate::timtree::{TimConfig, TimTree, TpStats};
use crate::txn::lock::LockManager;
use crate::txn::wal::{Op, Payload, Wal};
use crate::txn::{Transaction, TxnId};

#[derive(Clone, Debug, PartialEq)]
pub struct DbConfig {
    pub tim: TimConfig,
    /// Committed transactions between checkpoints; 0 disables them.
    pub checkpoint_interval: u64,
    /// Temporal writes take an entity X lock instead of S(e) + X(e, tp, ī).
    pub coarse_lock_mode: bool,
    pub fsync_on_commit: bool,
}

impl Default for DbConfig {
    fn default() -> Self {
        DbConfig {
            tim: TimConfig::default(),
            checkpoint_interval: 1000,
            coarse_lock_mode: false,
            fsync_on_commit: true,
        }
    }
}

/// What startup recovery did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub checkpoint: Option<u64>,
    pub replayed_txns: usize,
    pub discarded_txns: usize,
    pub truncated_tail: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DbCounters {
    pub commits: u64,
    pub aborts: u64,
    pub deadlocks: u64,
    pub lock_waits: u64,
    pub checkpoints: u64,
}

/// Comparable image of the logical database contents.
#[derive(Clone, Debug, PartialEq)]
pub struct StateImage {
    pub graph: GraphStore,
    pub temporal: BTreeMap<(String, EntityId), TimeIntervalSeries>,
}

pub struct Database {
    dir: PathBuf,
    config: DbConfig,
    gate: Arc<IoGate>,
    pub(crate) graph: RwLock<GraphStore>,
    pub(crate) tim: TimTree,
    pub(crate) locks: LockManager,
    wal: Mutex<Wal>,
    /// Highest log sequence number known to be on stable storage.
    synced: Mutex<u64>,
    ids: Mutex<(u64, u64)>,
    next_txn: AtomicU64,
    /// Commits hold the read side; a checkpoint holds the write side.
    ckpt_gate: RwLock<()>,
    checkpoint_id: AtomicU64,
    since_checkpoint: AtomicU64,
    commits: AtomicU64,
    aborts: AtomicU64,
    checkpoints: AtomicU64,
    recovery: RecoveryReport,
}

fn graph_path(dir: &Path, k: u64) -> PathBuf {
    dir.join(format!("graph.{k}.rec"))
}

fn buffer_path(dir: &Path, k: u64) -> PathBuf {
    dir.join(format!("buffer.{k}.buf"))
}

impl Database {
    pub fn open(dir: impl AsRef<Path>, config: DbConfig) -> Result<Database> {
        Self::open_with_gate(dir, config, Arc::new(IoGate::unlimited()))
    }

    /// Opens the database, running recovery. Every write goes through
    /// `gate`, which tests use to inject crashes.
    pub fn open_with_gate(dir: impl AsRef<Path>, config: DbConfig, gate: Arc<IoGate>) -> Result<Database> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let tim = TimTree::open(&dir.join("tim"), config.tim.clone(), gate.clone())?;
        let (wal, scan) = Wal::open(&dir.join("wal.log"), gate.clone())?;
        let mut report = RecoveryReport {
            truncated_tail: scan.damage.is_some(),
            ..Default::default()
        };

        let last_ckpt = scan.records.iter().rposition(|r| matches!(r.payload, Payload::Checkpoint { .. }));
        let mut next_txn = 1;
        let mut graph = GraphStore::new();
        let mut ckpt_id = 0;
        if let Some(i) = last_ckpt {
            let Payload::Checkpoint { id, next_txn: nt } = scan.records[i].payload else {
                unreachable!()
            };
            graph = record_file::read(&graph_path(&dir, id))?;
            tim.restore_buffer_file(&buffer_path(&dir, id))?;
            ckpt_id = id;
            next_txn = nt;
            report.checkpoint = Some(id);
        }
        remove_stale_checkpoints(&dir, &gate, ckpt_id)?;

        let db = Database {
            dir,
            gate,
            graph: RwLock::new(graph),
            tim,
            locks: LockManager::new(),
            wal: Mutex::new(wal),
            synced: Mutex::new(0),
            ids: Mutex::new((1, 1)),
            next_txn: AtomicU64::new(next_txn),
            ckpt_gate: RwLock::new(()),
            checkpoint_id: AtomicU64::new(ckpt_id),
            since_checkpoint: AtomicU64::new(0),
            commits: AtomicU64::new(0),
            aborts: AtomicU64::new(0),
            checkpoints: AtomicU64::new(0),
            config,
            recovery: RecoveryReport::default(),
        };

        let tail = &scan.records[last_ckpt.map_or(0, |i| i + 1)..];
        let mut pending: HashMap<TxnId, Vec<Op>> = HashMap::new();
        let mut max_txn = 0;
        for rec in tail {
            max_txn = max_txn.max(rec.txn.0);
            match &rec.payload {
                Payload::Begin => {
                    pending.insert(rec.txn, Vec::new());
                }
                Payload::Data(op) => pending.entry(rec.txn).or_default().push(op.clone()),
                Payload::Commit => {
                    let ops = pending.remove(&rec.txn).unwrap_or_default();
                    db.apply(&ops)?;
                    db.tim.maybe_flush()?;
                    report.replayed_txns += 1;
                }
                Payload::Abort { next_vid, next_eid } => {
                    pending.remove(&rec.txn);
                    db.graph.write().bump_next_ids(*next_vid, *next_eid);
                    report.discarded_txns += 1;
                }
                Payload::DefineProperty(def) => db.tim.install_def(def.clone())?,
                Payload::Checkpoint { .. } => {}
            }
        }
        report.discarded_txns += pending.len();
        let mut db = db;
        db.next_txn.fetch_max(max_txn + 1, Ordering::Relaxed);
        *db.ids.lock() = db.graph.read().next_ids();
        db.recovery = report;
        if db.recovery.replayed_txns + db.recovery.discarded_txns > 0 || db.recovery.truncated_tail {
            log::info!("recovery: {:?}", db.recovery);
        }
        Ok(db)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &DbConfig {
        &self.config
    }

    pub fn gate(&self) -> &Arc<IoGate> {
        &self.gate
    }

    pub fn recovery_report(&self) -> &RecoveryReport {
        &self.recovery
    }

    pub fn begin(&self) -> Transaction<'_> {
        let id = TxnId(self.next_txn.fetch_add(1, Ordering::Relaxed));
        Transaction::new(self, id)
    }

    /// Declares a temporal property. The definition is logged so replay can
    /// reinstall it.
    pub fn define_property(&self, spec: PropertySpec) -> Result<PropertyDef> {
        let _g = self.ckpt_gate.read();
        let def = self.tim.define(spec)?;
        let mut wal = self.wal.lock();
        wal.append(TxnId(0), Payload::DefineProperty(def.clone()))?;
        wal.sync()?;
        Ok(def)
    }

    pub fn property(&self, name: &str) -> Option<PropertyDef> {
        self.tim.property(name)
    }

    pub fn properties(&self) -> Vec<PropertyDef> {
        self.tim.properties()
    }

    pub fn graph(&self) -> RwLockReadGuard<'_, GraphStore> {
        self.graph.read()
    }

    pub fn tim(&self) -> &TimTree {
        &self.tim
    }

    pub fn stats(&self) -> TpStats {
        self.tim.stats()
    }

    pub fn counters(&self) -> DbCounters {
        DbCounters {
            commits: self.commits.load(Ordering::Relaxed),
            aborts: self.aborts.load(Ordering::Relaxed),
            deadlocks: self.locks.deadlocks(),
            lock_waits: self.locks.waits(),
            checkpoints: self.checkpoints.load(Ordering::Relaxed),
        }
    }

    pub fn lock_table_is_empty(&self) -> bool {
        self.locks.is_empty()
    }

    /// Size of the topology and static properties in record-file form.
    pub fn static_bytes(&self) -> u64 {
        record_file::encode(&self.graph.read()).len() as u64
    }

    pub fn wal_bytes(&self) -> u64 {
        self.wal.lock().bytes()
    }

    /// Flushes the Global Memtables and runs every pending merge.
    pub fn flush_all(&self) -> Result<()> {
        self.tim.flush()?;
        self.tim.merge_levels()
    }

    pub(crate) fn alloc_vid(&self) -> u64 {
        let mut ids = self.ids.lock();
        ids.0 += 1;
        ids.0 - 1
    }

    pub(crate) fn alloc_eid(&self) -> u64 {
        let mut ids = self.ids.lock();
        ids.1 += 1;
        ids.1 - 1
    }

    pub(crate) fn id_watermarks(&self) -> (u64, u64) {
        *self.ids.lock()
    }

    /// Logs and applies a transaction's buffer. Returns once the commit
    /// record is durable and the buffer is visible.
    pub(crate) fn commit_ops(&self, txn: TxnId, ops: &[Op]) -> Result<()> {
        {
            let _g = self.ckpt_gate.read();
            let (seq, file) = {
                let mut wal = self.wal.lock();
                wal.append(txn, Payload::Begin)?;
                for op in ops {
                    wal.append(txn, Payload::Data(op.clone()))?;
                }
                (wal.append(txn, Payload::Commit)?, wal.handle())
            };
            if self.config.fsync_on_commit {
                // Group commit: one sync covers every record appended before it.
                let mut synced = self.synced.lock();
                if *synced < seq {
                    let upto = self.wal.lock().last_seq();
                    file.sync_data()?;
                    *synced = upto;
                }
            }
            if let Err(e) = self.apply(ops) {
                log::error!("applying committed buffer of {txn} failed: {e}");
            }
        }
        self.commits.fetch_add(1, Ordering::Relaxed);
        if let Err(e) = self.tim.maybe_flush() {
            log::warn!("flush after commit of {txn} failed: {e}");
        }
        Ok(())
    }

    /// Checkpoints when the commit counter reaches the interval. Called
    /// after the committing transaction released its locks.
    pub(crate) fn after_commit(&self) {
        let n = self.config.checkpoint_interval;
        if n == 0 {
            return;
        }
        let due = self
            .since_checkpoint
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |c| Some(if c + 1 >= n { 0 } else { c + 1 }))
            .is_ok_and(|prev| prev + 1 >= n);
        if due {
            if let Err(e) = self.checkpoint() {
                log::warn!("checkpoint failed: {e}");
            }
        }
    }

    pub(crate) fn log_abort(&self, txn: TxnId) {
        let (next_vid, next_eid) = self.id_watermarks();
        self.aborts.fetch_add(1, Ordering::Relaxed);
        let _g = self.ckpt_gate.read();
        if let Err(e) = self.wal.lock().append(txn, Payload::Abort { next_vid, next_eid }) {
            log::debug!("abort record for {txn} not written: {e}");
        }
    }

    pub(crate) fn count_abort(&self) {
        self.aborts.fetch_add(1, Ordering::Relaxed);
    }

    /// Writes the record file and Buffer File for a new checkpoint, logs the
    /// checkpoint and restarts the log from it.
    pub fn checkpoint(&self) -> Result<u64> {
        let _g = self.ckpt_gate.write();
        let prev = self.checkpoint_id.load(Ordering::Acquire);
        let k = prev + 1;
        record_file::write(&self.gate, &graph_path(&self.dir, k), &self.graph.read())?;
        self.tim.write_buffer_file(&buffer_path(&self.dir, k), k)?;
        let payload = Payload::Checkpoint {
            id: k,
            next_txn: self.next_txn.load(Ordering::Relaxed),
        };
        let mut wal = self.wal.lock();
        wal.append(TxnId(0), payload.clone())?;
        wal.sync()?;
        wal.restart_with(TxnId(0), payload)?;
        drop(wal);
        self.checkpoint_id.store(k, Ordering::Release);
        self.checkpoints.fetch_add(1, Ordering::Relaxed);
        if prev > 0 {
            self.gate.remove(&graph_path(&self.dir, prev))?;
            self.gate.remove(&buffer_path(&self.dir, prev))?;
        }
        Ok(k)
    }

    pub(crate) fn apply(&self, ops: &[Op]) -> Result<()> {
        let mut g = self.graph.write();
        for op in ops {
            match op {
                Op::CreateNode { vid, labels } => g.insert_node(*vid, labels.iter().cloned().collect()),
                Op::CreateEdge { eid, src, dst, labels } => {
                    g.insert_edge(*eid, *src, *dst, labels.iter().cloned().collect())?
                }
                Op::DeleteNode { vid } => {
                    g.remove_node(*vid)?;
                }
                Op::DeleteEdge { eid } => {
                    g.remove_edge(*eid)?;
                }
                Op::SetProp { entity, name, value } => g.set_prop(*entity, name, value.clone())?,
                Op::RemoveProp { entity, name } => {
                    g.rm_prop(*entity, name)?;
                }
                Op::AttachTprop { entity, name, pid } => g.attach_tprop(*entity, name, *pid)?,
                Op::Temporal {
                    entity,
                    pid,
                    interval,
                    value,
                } => self.tim.stage(*entity, *pid, *interval, value.clone())?,
            }
        }
        Ok(())
    }

    /// Full logical contents: topology plus every attached temporal series.
    pub fn state_image(&self) -> Result<StateImage> {
        let graph = self.graph.read().clone();
        let mut temporal = BTreeMap::new();
        for def in self.tim.properties() {
            for e in graph.entities_with(def.id) {
                let s = self.tim.entity_history(e, def.id, TimeInterval::ALL)?;
                if !s.is_empty() {
                    temporal.insert((def.name.clone(), e), s);
                }
            }
        }
        Ok(StateImage { graph, temporal })
    }
}

fn remove_stale_checkpoints(dir: &Path, gate: &IoGate, keep: u64) -> Result<()> {
    let keep: BTreeSet<String> = [format!("graph.{keep}.rec"), format!("buffer.{keep}.buf")].into();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        let stale = (name.starts_with("graph.") && name.ends_with(".rec"))
            || (name.starts_with("buffer.") && name.ends_with(".buf"))
            || name.ends_with(".tmp");
        if stale && !keep.contains(&name) {
            gate.remove(&dir.join(name))?;
        }
    }
    Ok(())
}
