//! Transactions: private write buffers, two-level locking and commit through
//! the write-ahead log.
//!
//! Reads are read-committed: they take short shared locks and see committed
//! data plus the transaction's own buffer. Writes take long locks held until
//! commit or abort. In the default fine mode a temporal write holds `S(e)`
//! and `X(e, tp, ī)`; in coarse mode it holds `X(e)`.

pub mod lock;
pub mod wal;

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::db::Database;
use crate::error::{Error, Result};
use crate::graph::{unknown_entity, Direction, EntityId};
use crate::model::{TimeInterval, TimeIntervalSeries, Value};
use crate::schema::{PropertyDef, PropertyId};

use lock::{LockMode, LockTarget};
use wal::Op;

type Overlay = TimeIntervalSeries<Option<Value>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxnState {
    Active,
    Committed,
    Aborted,
}

#[derive(Clone, Debug)]
struct NewEdge {
    src: u64,
    dst: u64,
    labels: BTreeSet<String>,
}

pub struct Transaction<'db> {
    db: &'db Database,
    id: TxnId,
    state: TxnState,
    /// Set when a lock request picked this transaction as deadlock victim.
    doomed: Cell<bool>,
    ops: Vec<Op>,
    held: BTreeSet<(LockTargetKey, bool)>,
    new_nodes: BTreeMap<u64, BTreeSet<String>>,
    new_edges: BTreeMap<u64, NewEdge>,
    deleted: BTreeSet<EntityId>,
    props: BTreeMap<(EntityId, String), Option<Value>>,
    tprops: BTreeMap<(EntityId, String), Option<PropertyId>>,
    temporal: BTreeMap<(EntityId, PropertyId), Overlay>,
}

/// Orderable form of a lock target for the held-lock set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct LockTargetKey(EntityId, Option<(PropertyId, u64, u64)>);

impl From<LockTarget> for LockTargetKey {
    fn from(t: LockTarget) -> Self {
        match t {
            LockTarget::Entity(e) => LockTargetKey(e, None),
            LockTarget::Interval(e, p, iv) => LockTargetKey(e, Some((p, iv.start().tick(), iv.end().tick()))),
        }
    }
}

fn exclusive(m: LockMode) -> bool {
    m == LockMode::Exclusive
}

impl<'db> Transaction<'db> {
    pub(crate) fn new(db: &'db Database, id: TxnId) -> Self {
        Transaction {
            db,
            id,
            state: TxnState::Active,
            doomed: Cell::new(false),
            ops: Vec::new(),
            held: BTreeSet::new(),
            new_nodes: BTreeMap::new(),
            new_edges: BTreeMap::new(),
            deleted: BTreeSet::new(),
            props: BTreeMap::new(),
            tprops: BTreeMap::new(),
            temporal: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> TxnId {
        self.id
    }

    pub fn state(&self) -> TxnState {
        self.state
    }

    pub fn database(&self) -> &'db Database {
        self.db
    }

    /// Buffered operations, in the order they will be logged.
    pub fn pending_ops(&self) -> &[Op] {
        &self.ops
    }

    fn check_active(&self) -> Result<()> {
        if self.state != TxnState::Active {
            return Err(Error::TxnState {
                txn: self.id,
                state: self.state,
            });
        }
        if self.doomed.get() {
            return Err(Error::Deadlock(self.id));
        }
        Ok(())
    }

    fn acquire(&self, target: LockTarget, mode: LockMode) -> Result<()> {
        self.db.locks.acquire(self.id, target, mode).inspect_err(|e| {
            if e.is_deadlock() {
                self.doomed.set(true);
            }
        })
    }

    fn covered(&self, target: LockTarget, mode: LockMode) -> bool {
        let e = target.entity();
        self.held.contains(&(LockTargetKey(e, None), true))
            || self.held.contains(&(target.into(), true))
            || (!exclusive(mode) && self.held.contains(&(target.into(), false)))
    }

    /// Acquires a lock held until the transaction ends.
    fn lock_long(&mut self, target: LockTarget, mode: LockMode) -> Result<()> {
        if self.covered(target, mode) {
            return Ok(());
        }
        self.acquire(target, mode)?;
        self.held.insert((target.into(), exclusive(mode)));
        Ok(())
    }

    /// Runs `f` under short shared locks on `targets`.
    fn read_locked<T>(&self, targets: &[LockTarget], f: impl FnOnce() -> Result<T>) -> Result<T> {
        self.check_active()?;
        let mut taken = Vec::new();
        for &t in targets {
            if self.covered(t, LockMode::Shared) {
                continue;
            }
            if let Err(e) = self.acquire(t, LockMode::Shared) {
                for &t in &taken {
                    self.db.locks.release(self.id, t, LockMode::Shared);
                }
                return Err(e);
            }
            taken.push(t);
        }
        let out = f();
        for &t in &taken {
            self.db.locks.release(self.id, t, LockMode::Shared);
        }
        out
    }

    fn is_new(&self, e: EntityId) -> bool {
        match e {
            EntityId::Node(v) => self.new_nodes.contains_key(&v),
            EntityId::Edge(r) => self.new_edges.contains_key(&r),
        }
    }

    /// Existence in this transaction's view, without locking.
    fn exists_unlocked(&self, e: EntityId) -> bool {
        if self.deleted.contains(&e) {
            return false;
        }
        self.is_new(e) || self.db.graph.read().contains(e)
    }

    fn require(&self, e: EntityId) -> Result<()> {
        if self.exists_unlocked(e) {
            Ok(())
        } else {
            Err(unknown_entity(e))
        }
    }

    fn entity_read_targets(&self, e: EntityId) -> Vec<LockTarget> {
        if self.is_new(e) {
            Vec::new()
        } else {
            vec![LockTarget::Entity(e)]
        }
    }

    // ----- topology -----

    pub fn create_node<S: AsRef<str>>(&mut self, labels: &[S]) -> Result<u64> {
        self.check_active()?;
        let vid = self.db.alloc_vid();
        self.lock_long(LockTarget::Entity(EntityId::Node(vid)), LockMode::Exclusive)?;
        let labels: BTreeSet<String> = labels.iter().map(|l| l.as_ref().to_owned()).collect();
        self.ops.push(Op::CreateNode {
            vid,
            labels: labels.iter().cloned().collect(),
        });
        self.new_nodes.insert(vid, labels);
        Ok(vid)
    }

    pub fn create_edge<S: AsRef<str>>(&mut self, src: u64, dst: u64, labels: &[S]) -> Result<u64> {
        self.check_active()?;
        for v in [src, dst] {
            let n = EntityId::Node(v);
            if !self.is_new(n) {
                self.lock_long(LockTarget::Entity(n), LockMode::Shared)?;
            }
            self.require(n)?;
        }
        let eid = self.db.alloc_eid();
        self.lock_long(LockTarget::Entity(EntityId::Edge(eid)), LockMode::Exclusive)?;
        let labels: BTreeSet<String> = labels.iter().map(|l| l.as_ref().to_owned()).collect();
        self.ops.push(Op::CreateEdge {
            eid,
            src,
            dst,
            labels: labels.iter().cloned().collect(),
        });
        self.new_edges.insert(eid, NewEdge { src, dst, labels });
        Ok(eid)
    }

    /// Deletes a node with all incident edges and all their properties.
    pub fn delete_node(&mut self, vid: u64) -> Result<()> {
        self.check_active()?;
        let n = EntityId::Node(vid);
        self.lock_long(LockTarget::Entity(n), LockMode::Exclusive)?;
        self.require(n)?;
        for eid in self.rel_view(vid, Direction::Both, &[])? {
            self.delete_edge(eid)?;
        }
        self.clear_temporal(n)?;
        self.ops.push(Op::DeleteNode { vid });
        self.forget(n);
        Ok(())
    }

    pub fn delete_edge(&mut self, eid: u64) -> Result<()> {
        self.check_active()?;
        let r = EntityId::Edge(eid);
        self.lock_long(LockTarget::Entity(r), LockMode::Exclusive)?;
        self.require(r)?;
        self.clear_temporal(r)?;
        self.ops.push(Op::DeleteEdge { eid });
        self.forget(r);
        Ok(())
    }

    /// Deletes every edge from `src` to `dst` carrying `labels`; returns how
    /// many were removed.
    pub fn delete_edges_between<S: AsRef<str>>(&mut self, src: u64, dst: u64, labels: &[S]) -> Result<usize> {
        let labels: Vec<String> = labels.iter().map(|l| l.as_ref().to_owned()).collect();
        let matching: Vec<u64> = self
            .rel_view(src, Direction::Outgoing, &labels)?
            .into_iter()
            .filter(|&eid| self.endpoints(eid).is_ok_and(|(_, d)| d == dst))
            .collect();
        for &eid in &matching {
            self.delete_edge(eid)?;
        }
        Ok(matching.len())
    }

    fn forget(&mut self, e: EntityId) {
        self.deleted.insert(e);
        self.props.retain(|(x, _), _| *x != e);
        self.tprops.retain(|(x, _), _| *x != e);
        self.temporal.retain(|(x, _), _| *x != e);
    }

    fn clear_temporal(&mut self, e: EntityId) -> Result<()> {
        let attached: Vec<(String, PropertyId)> = self.tprops_of(e)?;
        for (name, pid) in attached {
            self.stage_temporal(e, pid, TimeInterval::ALL, None);
            self.tprops.insert((e, name), None);
        }
        Ok(())
    }

    // ----- topology reads -----

    pub fn node_exists(&self, vid: u64) -> Result<bool> {
        let e = EntityId::Node(vid);
        self.read_locked(&self.entity_read_targets(e), || Ok(self.exists_unlocked(e)))
    }

    pub fn edge_exists(&self, eid: u64) -> Result<bool> {
        let e = EntityId::Edge(eid);
        self.read_locked(&self.entity_read_targets(e), || Ok(self.exists_unlocked(e)))
    }

    /// Nodes whose labels include all of `labels`.
    pub fn get_nodes<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<u64>> {
        self.check_active()?;
        let labels: Vec<String> = labels.iter().map(|l| l.as_ref().to_owned()).collect();
        let mut out: BTreeSet<u64> = self.db.graph.read().get_node(&labels).into_iter().collect();
        for (vid, ls) in &self.new_nodes {
            if labels.iter().all(|l| ls.contains(l)) {
                out.insert(*vid);
            }
        }
        out.retain(|v| !self.deleted.contains(&EntityId::Node(*v)));
        Ok(out.into_iter().collect())
    }

    /// Every live edge, optionally filtered by labels.
    pub fn get_edges<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<u64>> {
        self.check_active()?;
        let labels: Vec<String> = labels.iter().map(|l| l.as_ref().to_owned()).collect();
        let mut out: BTreeSet<u64> = self
            .db
            .graph
            .read()
            .edges()
            .filter(|r| r.attrs.has_labels(&labels))
            .map(|r| r.eid)
            .collect();
        for (eid, ne) in &self.new_edges {
            if labels.iter().all(|l| ne.labels.contains(l)) {
                out.insert(*eid);
            }
        }
        out.retain(|r| !self.deleted.contains(&EntityId::Edge(*r)));
        Ok(out.into_iter().collect())
    }

    fn rel_view(&self, vid: u64, dir: Direction, labels: &[String]) -> Result<Vec<u64>> {
        let n = EntityId::Node(vid);
        self.require(n)?;
        let mut out: BTreeSet<u64> = if self.is_new(n) {
            BTreeSet::new()
        } else {
            self.db.graph.read().get_rel(vid, dir, labels)?.into_iter().collect()
        };
        for (eid, ne) in &self.new_edges {
            let hit = match dir {
                Direction::Outgoing => ne.src == vid,
                Direction::Incoming => ne.dst == vid,
                Direction::Both => ne.src == vid || ne.dst == vid,
            };
            if hit && labels.iter().all(|l| ne.labels.contains(l)) {
                out.insert(*eid);
            }
        }
        out.retain(|r| !self.deleted.contains(&EntityId::Edge(*r)));
        Ok(out.into_iter().collect())
    }

    /// Incident edges of `vid` in direction `dir` carrying `labels`.
    pub fn get_rel<S: AsRef<str>>(&self, vid: u64, dir: Direction, labels: &[S]) -> Result<Vec<u64>> {
        let labels: Vec<String> = labels.iter().map(|l| l.as_ref().to_owned()).collect();
        let n = EntityId::Node(vid);
        self.read_locked(&self.entity_read_targets(n), || self.rel_view(vid, dir, &labels))
    }

    /// `(src, dst)` of an edge.
    pub fn endpoints(&self, eid: u64) -> Result<(u64, u64)> {
        let r = EntityId::Edge(eid);
        self.require(r)?;
        if let Some(ne) = self.new_edges.get(&eid) {
            return Ok((ne.src, ne.dst));
        }
        let g = self.db.graph.read();
        let rec = g.edge(eid).ok_or(Error::UnknownEdge(eid))?;
        Ok((rec.src, rec.dst))
    }

    pub fn labels(&self, e: EntityId) -> Result<BTreeSet<String>> {
        self.read_locked(&self.entity_read_targets(e), || {
            self.require(e)?;
            Ok(match e {
                EntityId::Node(v) if self.new_nodes.contains_key(&v) => self.new_nodes[&v].clone(),
                EntityId::Edge(r) if self.new_edges.contains_key(&r) => self.new_edges[&r].labels.clone(),
                _ => self.db.graph.read().attrs(e).map(|a| a.labels.clone()).unwrap_or_default(),
            })
        })
    }

    // ----- non-temporal properties -----

    fn prop_unlocked(&self, e: EntityId, name: &str) -> Result<Option<Value>> {
        self.require(e)?;
        if let Some(v) = self.props.get(&(e, name.to_owned())) {
            return Ok(v.clone());
        }
        if self.is_new(e) {
            return Ok(None);
        }
        Ok(self.db.graph.read().get_prop(e, name)?.cloned())
    }

    pub fn get_prop(&self, e: EntityId, name: &str) -> Result<Option<Value>> {
        self.read_locked(&self.entity_read_targets(e), || self.prop_unlocked(e, name))
    }

    /// All non-temporal properties of `e`.
    pub fn props(&self, e: EntityId) -> Result<BTreeMap<String, Value>> {
        self.read_locked(&self.entity_read_targets(e), || {
            self.require(e)?;
            let mut out = if self.is_new(e) {
                BTreeMap::new()
            } else {
                self.db.graph.read().attrs(e).map(|a| a.props.clone()).unwrap_or_default()
            };
            for ((x, k), v) in &self.props {
                if *x == e {
                    match v {
                        Some(v) => out.insert(k.clone(), v.clone()),
                        None => out.remove(k),
                    };
                }
            }
            Ok(out)
        })
    }

    pub fn set_prop(&mut self, e: EntityId, name: &str, value: Value) -> Result<()> {
        self.check_active()?;
        self.lock_long(LockTarget::Entity(e), LockMode::Exclusive)?;
        self.require(e)?;
        if self.tprop_unlocked(e, name)?.is_some() {
            return Err(Error::NamespaceClash {
                entity: e,
                name: name.into(),
                existing: "temporal",
            });
        }
        self.ops.push(Op::SetProp {
            entity: e,
            name: name.into(),
            value: value.clone(),
        });
        self.props.insert((e, name.into()), Some(value));
        Ok(())
    }

    /// Removes a property of either kind; removing a temporal property also
    /// clears its whole series. Returns whether anything was removed.
    pub fn rm_prop(&mut self, e: EntityId, name: &str) -> Result<bool> {
        self.check_active()?;
        self.lock_long(LockTarget::Entity(e), LockMode::Exclusive)?;
        self.require(e)?;
        let plain = self.prop_unlocked(e, name)?.is_some();
        let temporal = self.tprop_unlocked(e, name)?;
        if !plain && temporal.is_none() {
            return Ok(false);
        }
        if let Some(pid) = temporal {
            self.stage_temporal(e, pid, TimeInterval::ALL, None);
            self.tprops.insert((e, name.into()), None);
        }
        if plain {
            self.props.insert((e, name.into()), None);
        }
        self.ops.push(Op::RemoveProp {
            entity: e,
            name: name.into(),
        });
        Ok(true)
    }

    // ----- temporal properties -----

    fn tprop_unlocked(&self, e: EntityId, name: &str) -> Result<Option<PropertyId>> {
        self.require(e)?;
        if let Some(p) = self.tprops.get(&(e, name.to_owned())) {
            return Ok(*p);
        }
        if self.is_new(e) {
            return Ok(None);
        }
        let g = self.db.graph.read();
        Ok(g.attrs(e).and_then(|a| a.tprops.get(name).copied()))
    }

    fn tprops_of(&self, e: EntityId) -> Result<Vec<(String, PropertyId)>> {
        self.require(e)?;
        let mut out: BTreeMap<String, PropertyId> = if self.is_new(e) {
            BTreeMap::new()
        } else {
            self.db.graph.read().attrs(e).map(|a| a.tprops.clone()).unwrap_or_default()
        };
        for ((x, k), p) in &self.tprops {
            if *x == e {
                match p {
                    Some(p) => out.insert(k.clone(), *p),
                    None => out.remove(k),
                };
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Temporal properties attached to `e`, by name.
    pub fn temporal_props(&self, e: EntityId) -> Result<Vec<(String, PropertyId)>> {
        self.read_locked(&self.entity_read_targets(e), || self.tprops_of(e))
    }

    pub fn property(&self, name: &str) -> Result<PropertyDef> {
        self.db
            .property(name)
            .ok_or_else(|| Error::UnknownProperty(name.into()))
    }

    fn stage_temporal(&mut self, e: EntityId, pid: PropertyId, iv: TimeInterval, value: Option<Value>) {
        self.temporal.entry((e, pid)).or_default().overwrite(iv, value.clone());
        self.ops.push(Op::Temporal {
            entity: e,
            pid,
            interval: iv,
            value,
        });
    }

    /// Sets the temporal property `name` of `e` to `value` over `iv`,
    /// attaching the property to the entity on first use.
    pub fn set_tp(&mut self, e: EntityId, name: &str, iv: TimeInterval, value: Value) -> Result<()> {
        self.check_active()?;
        let def = self.property(name)?;
        if value.value_type() != def.value_type {
            return Err(Error::TypeMismatch {
                property: def.name,
                expected: def.value_type,
                found: value.value_type(),
            });
        }
        if self.db.config().coarse_lock_mode {
            self.lock_long(LockTarget::Entity(e), LockMode::Exclusive)?;
        } else {
            self.lock_long(LockTarget::Entity(e), LockMode::Shared)?;
            self.lock_long(LockTarget::Interval(e, def.id, iv), LockMode::Exclusive)?;
        }
        self.require(e)?;
        if self.tprop_unlocked(e, name)?.is_none() {
            if self.prop_unlocked(e, name)?.is_some() {
                return Err(Error::NamespaceClash {
                    entity: e,
                    name: name.into(),
                    existing: "non-temporal",
                });
            }
            self.ops.push(Op::AttachTprop {
                entity: e,
                name: name.into(),
                pid: def.id,
            });
            self.tprops.insert((e, name.into()), Some(def.id));
        }
        self.stage_temporal(e, def.id, iv, Some(value));
        Ok(())
    }

    fn temporal_targets(&self, e: EntityId, pid: PropertyId, iv: TimeInterval) -> Vec<LockTarget> {
        if self.is_new(e) {
            return Vec::new();
        }
        if self.db.config().coarse_lock_mode {
            vec![LockTarget::Entity(e)]
        } else {
            vec![LockTarget::Entity(e), LockTarget::Interval(e, pid, iv)]
        }
    }

    fn history_unlocked(&self, e: EntityId, pid: PropertyId, iv: TimeInterval) -> Result<TimeIntervalSeries> {
        self.require(e)?;
        let base = if self.is_new(e) {
            TimeIntervalSeries::new()
        } else {
            self.db.tim.entity_history(e, pid, iv)?
        };
        let Some(own) = self.temporal.get(&(e, pid)) else {
            return Ok(base);
        };
        let mut merged: Overlay = base.map(|v| Some(v.clone()));
        merged.overlay(&own.slice(iv));
        Ok(merged.filter_map(|v| v.clone()))
    }

    /// The series of property `pid` for `e`, restricted to `iv`.
    pub fn history(&self, e: EntityId, pid: PropertyId, iv: TimeInterval) -> Result<TimeIntervalSeries> {
        self.read_locked(&self.temporal_targets(e, pid, iv), || self.history_unlocked(e, pid, iv))
    }

    /// `getTP` by property name.
    pub fn get_tp(&self, e: EntityId, name: &str, iv: TimeInterval) -> Result<TimeIntervalSeries> {
        let def = self.property(name)?;
        self.history(e, def.id, iv)
    }

    /// Last entry of the series with its full interval.
    pub fn latest(&self, e: EntityId, pid: PropertyId) -> Result<Option<(TimeInterval, Value)>> {
        let all = TimeInterval::ALL;
        self.read_locked(&self.temporal_targets(e, pid, all), || {
            self.require(e)?;
            if self.temporal.contains_key(&(e, pid)) || self.is_new(e) {
                return Ok(self.history_unlocked(e, pid, all)?.last().cloned());
            }
            self.db.tim.latest_entry(e, pid)
        })
    }

    /// Entities carrying temporal property `pid` in this transaction's view.
    pub fn entities_with(&self, pid: PropertyId) -> Result<Vec<EntityId>> {
        self.check_active()?;
        let mut out: BTreeSet<EntityId> = self.db.graph.read().entities_with(pid).into_iter().collect();
        for ((e, _), p) in &self.tprops {
            match p {
                Some(p) if *p == pid => {
                    out.insert(*e);
                }
                None => {
                    out.remove(e);
                }
                _ => {}
            }
        }
        out.retain(|e| !self.deleted.contains(e));
        Ok(out.into_iter().collect())
    }

    // ----- termination -----

    /// Logs and applies the buffer. On failure the transaction is aborted.
    pub fn commit(&mut self) -> Result<()> {
        if let Err(e) = self.check_active() {
            if e.is_deadlock() {
                self.abort()?;
            }
            return Err(e);
        }
        if self.ops.is_empty() {
            self.finish(TxnState::Committed);
            return Ok(());
        }
        let ops = std::mem::take(&mut self.ops);
        match self.db.commit_ops(self.id, &ops) {
            Ok(()) => {
                self.finish(TxnState::Committed);
                self.db.after_commit();
                Ok(())
            }
            Err(source) => {
                self.ops = ops;
                self.abort()?;
                Err(Error::CommitIo {
                    txn: self.id,
                    source: Box::new(source),
                })
            }
        }
    }

    pub fn abort(&mut self) -> Result<()> {
        if self.state != TxnState::Active {
            return Err(Error::TxnState {
                txn: self.id,
                state: self.state,
            });
        }
        if self.ops.is_empty() && self.new_nodes.is_empty() && self.new_edges.is_empty() {
            self.db.count_abort();
        } else {
            self.db.log_abort(self.id);
        }
        self.finish(TxnState::Aborted);
        Ok(())
    }

    fn finish(&mut self, state: TxnState) {
        self.state = state;
        self.ops.clear();
        self.held.clear();
        self.db.locks.release_all(self.id);
    }
}

impl Drop for Transaction<'_> {
    fn drop(&mut self) {
        if self.state == TxnState::Active {
            let _ = self.abort();
        }
    }
}
