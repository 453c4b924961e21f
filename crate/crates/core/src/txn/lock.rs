//! Two-level lock manager: entity locks and property-interval locks.
//!
//! Grants are kept per entity, since locks on different entities never
//! conflict. A blocked request records the holders it waits for; every new
//! wait edge triggers a cycle search over the wait-for graph and the youngest
//! transaction in a cycle is chosen as victim.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{Condvar, Mutex};

use crate::error::{Error, Result};
use crate::graph::EntityId;
use crate::model::TimeInterval;
use crate::schema::PropertyId;

use super::TxnId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LockTarget {
    Entity(EntityId),
    Interval(EntityId, PropertyId, TimeInterval),
}

impl LockTarget {
    pub fn entity(&self) -> EntityId {
        match *self {
            LockTarget::Entity(e) | LockTarget::Interval(e, _, _) => e,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LockMode {
    Shared,
    Exclusive,
}

/// Compatibility rule between two locks held by different transactions.
pub fn conflicts(a: (LockTarget, LockMode), b: (LockTarget, LockMode)) -> bool {
    use LockMode::*;
    use LockTarget::*;
    if a.0.entity() != b.0.entity() {
        return false;
    }
    match (a, b) {
        ((Entity(_), ma), (Entity(_), mb)) => ma == Exclusive || mb == Exclusive,
        ((Entity(_), m), (Interval(..), _)) | ((Interval(..), _), (Entity(_), m)) => m == Exclusive,
        ((Interval(_, pa, ia), ma), (Interval(_, pb, ib), mb)) => {
            pa == pb && (ma == Exclusive || mb == Exclusive) && ia.overlaps(&ib)
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Grant {
    txn: TxnId,
    target: LockTarget,
    mode: LockMode,
}

#[derive(Default)]
struct Table {
    grants: HashMap<EntityId, Vec<Grant>>,
    waits_for: HashMap<TxnId, BTreeSet<TxnId>>,
    victims: BTreeSet<TxnId>,
}

impl Table {
    fn blockers(&self, txn: TxnId, target: LockTarget, mode: LockMode) -> BTreeSet<TxnId> {
        self.grants
            .get(&target.entity())
            .into_iter()
            .flatten()
            .filter(|g| g.txn != txn && conflicts((g.target, g.mode), (target, mode)))
            .map(|g| g.txn)
            .collect()
    }

    /// A cycle through `from`, if any, as the list of its members.
    fn cycle_through(&self, from: TxnId) -> Option<Vec<TxnId>> {
        fn dfs(
            t: &Table,
            node: TxnId,
            goal: TxnId,
            path: &mut Vec<TxnId>,
            seen: &mut BTreeSet<TxnId>,
        ) -> bool {
            for &next in t.waits_for.get(&node).into_iter().flatten() {
                if next == goal {
                    return true;
                }
                if seen.insert(next) {
                    path.push(next);
                    if dfs(t, next, goal, path, seen) {
                        return true;
                    }
                    path.pop();
                }
            }
            false
        }
        let mut path = vec![from];
        let mut seen = BTreeSet::from([from]);
        dfs(self, from, from, &mut path, &mut seen).then_some(path)
    }
}

#[derive(Default)]
pub struct LockManager {
    table: Mutex<Table>,
    wake: Condvar,
    deadlocks: AtomicU64,
    waits: AtomicU64,
}

impl LockManager {
    pub fn new() -> Self {
        Self::default()
    }

    /// Blocks until the lock is grantable. Fails with [`Error::Deadlock`]
    /// when the requester, or a transaction it waits for, closes a cycle
    /// and the requester is the youngest member.
    pub fn acquire(&self, txn: TxnId, target: LockTarget, mode: LockMode) -> Result<()> {
        let mut t = self.table.lock();
        let mut counted = false;
        loop {
            if t.victims.remove(&txn) {
                t.waits_for.remove(&txn);
                self.deadlocks.fetch_add(1, Ordering::Relaxed);
                self.wake.notify_all();
                return Err(Error::Deadlock(txn));
            }
            let blockers = t.blockers(txn, target, mode);
            if blockers.is_empty() {
                t.waits_for.remove(&txn);
                t.grants
                    .entry(target.entity())
                    .or_default()
                    .push(Grant { txn, target, mode });
                return Ok(());
            }
            if !counted {
                self.waits.fetch_add(1, Ordering::Relaxed);
                counted = true;
            }
            let changed = t.waits_for.get(&txn) != Some(&blockers);
            t.waits_for.insert(txn, blockers);
            if changed {
                if let Some(cycle) = t.cycle_through(txn) {
                    let victim = *cycle.iter().max().unwrap();
                    log::debug!("deadlock among {cycle:?}; victim {victim}");
                    t.victims.insert(victim);
                    if victim != txn {
                        self.wake.notify_all();
                    }
                    continue;
                }
            }
            self.wake.wait(&mut t);
        }
    }

    /// Drops one grant matching `(txn, target, mode)`.
    pub fn release(&self, txn: TxnId, target: LockTarget, mode: LockMode) {
        let mut t = self.table.lock();
        let e = target.entity();
        if let Some(gs) = t.grants.get_mut(&e) {
            if let Some(i) = gs
                .iter()
                .position(|g| g.txn == txn && g.target == target && g.mode == mode)
            {
                gs.swap_remove(i);
            }
            if gs.is_empty() {
                t.grants.remove(&e);
            }
        }
        self.wake.notify_all();
    }

    pub fn release_all(&self, txn: TxnId) {
        let mut t = self.table.lock();
        t.grants.retain(|_, gs| {
            gs.retain(|g| g.txn != txn);
            !gs.is_empty()
        });
        t.waits_for.remove(&txn);
        t.victims.remove(&txn);
        self.wake.notify_all();
    }

    /// Whether `other` could be granted right now (used by tests).
    pub fn would_grant(&self, txn: TxnId, target: LockTarget, mode: LockMode) -> bool {
        self.table.lock().blockers(txn, target, mode).is_empty()
    }

    pub fn is_empty(&self) -> bool {
        let t = self.table.lock();
        t.grants.is_empty() && t.waits_for.is_empty()
    }

    pub fn held_by(&self, txn: TxnId) -> usize {
        let t = self.table.lock();
        t.grants.values().flatten().filter(|g| g.txn == txn).count()
    }

    pub fn deadlocks(&self) -> u64 {
        self.deadlocks.load(Ordering::Relaxed)
    }

    /// Number of requests that had to wait at least once.
    pub fn waits(&self) -> u64 {
        self.waits.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::thread;
    use std::time::Duration;

    const E: EntityId = EntityId::Edge(7);
    const TP: PropertyId = PropertyId(1);

    fn iv(s: u64, e: u64) -> TimeInterval {
        TimeInterval::ticks(s, e).unwrap()
    }

    #[test]
    fn disjoint_intervals_grant_together() {
        let m = LockManager::new();
        m.acquire(TxnId(1), LockTarget::Interval(E, TP, iv(0, 10)), LockMode::Exclusive)
            .unwrap();
        assert!(m.would_grant(TxnId(2), LockTarget::Interval(E, TP, iv(10, 20)), LockMode::Exclusive));
        assert!(!m.would_grant(TxnId(2), LockTarget::Interval(E, TP, iv(5, 8)), LockMode::Shared));
        m.release_all(TxnId(1));
        assert!(m.is_empty());
    }

    #[test]
    fn entity_shared_admits_interval_locks() {
        let m = LockManager::new();
        m.acquire(TxnId(1), LockTarget::Entity(E), LockMode::Shared).unwrap();
        assert!(m.would_grant(TxnId(2), LockTarget::Interval(E, TP, iv(0, 10)), LockMode::Shared));
        assert!(m.would_grant(TxnId(2), LockTarget::Interval(E, TP, iv(0, 10)), LockMode::Exclusive));
        assert!(!m.would_grant(TxnId(2), LockTarget::Entity(E), LockMode::Exclusive));
    }

    #[test]
    fn own_locks_never_block() {
        let m = LockManager::new();
        m.acquire(TxnId(1), LockTarget::Entity(E), LockMode::Exclusive).unwrap();
        m.acquire(TxnId(1), LockTarget::Entity(E), LockMode::Shared).unwrap();
        m.release(TxnId(1), LockTarget::Entity(E), LockMode::Shared);
        assert_eq!(m.held_by(TxnId(1)), 1);
    }

    #[test]
    fn waiter_proceeds_after_release() {
        let m = Arc::new(LockManager::new());
        let x = LockTarget::Interval(E, TP, iv(0, 10));
        m.acquire(TxnId(1), x, LockMode::Exclusive).unwrap();
        let m2 = m.clone();
        let h = thread::spawn(move || {
            m2.acquire(TxnId(2), LockTarget::Interval(E, TP, iv(5, 8)), LockMode::Shared)
                .unwrap();
            m2.release_all(TxnId(2));
        });
        thread::sleep(Duration::from_millis(30));
        assert!(!h.is_finished());
        m.release_all(TxnId(1));
        h.join().unwrap();
        assert!(m.is_empty());
        assert_eq!(m.waits(), 1);
    }

    #[test]
    fn two_cycle_picks_youngest() {
        let m = Arc::new(LockManager::new());
        let a = LockTarget::Entity(EntityId::Node(1));
        let b = LockTarget::Entity(EntityId::Node(2));
        m.acquire(TxnId(1), a, LockMode::Exclusive).unwrap();
        m.acquire(TxnId(2), b, LockMode::Exclusive).unwrap();
        let m1 = m.clone();
        let old = thread::spawn(move || {
            let r = m1.acquire(TxnId(1), b, LockMode::Exclusive);
            m1.release_all(TxnId(1));
            r
        });
        thread::sleep(Duration::from_millis(20));
        let young = m.acquire(TxnId(2), a, LockMode::Exclusive);
        assert!(matches!(young, Err(Error::Deadlock(TxnId(2)))));
        m.release_all(TxnId(2));
        assert!(old.join().unwrap().is_ok());
        assert!(m.is_empty());
        assert_eq!(m.deadlocks(), 1);
    }

    #[test]
    fn victim_woken_when_older_closes_cycle() {
        let m = Arc::new(LockManager::new());
        let a = LockTarget::Entity(EntityId::Node(1));
        let b = LockTarget::Entity(EntityId::Node(2));
        m.acquire(TxnId(1), a, LockMode::Exclusive).unwrap();
        m.acquire(TxnId(9), b, LockMode::Exclusive).unwrap();
        let m9 = m.clone();
        let young = thread::spawn(move || {
            let r = m9.acquire(TxnId(9), a, LockMode::Exclusive);
            m9.release_all(TxnId(9));
            r
        });
        thread::sleep(Duration::from_millis(20));
        m.acquire(TxnId(1), b, LockMode::Exclusive).unwrap();
        assert!(matches!(young.join().unwrap(), Err(Error::Deadlock(TxnId(9)))));
        m.release_all(TxnId(1));
        assert!(m.is_empty());
    }

    #[test]
    fn chain_without_cycle_has_no_victim() {
        let m = Arc::new(LockManager::new());
        let e = |n| LockTarget::Entity(EntityId::Node(n));
        m.acquire(TxnId(3), e(3), LockMode::Exclusive).unwrap();
        m.acquire(TxnId(2), e(2), LockMode::Exclusive).unwrap();
        let mut hs = Vec::new();
        for (t, want) in [(2, 3), (1, 2)] {
            let m = m.clone();
            hs.push(thread::spawn(move || {
                let r = m.acquire(TxnId(t), e(want), LockMode::Exclusive);
                m.release_all(TxnId(t));
                r
            }));
            thread::sleep(Duration::from_millis(10));
        }
        thread::sleep(Duration::from_millis(20));
        assert_eq!(m.deadlocks(), 0);
        m.release_all(TxnId(3));
        for h in hs {
            assert!(h.join().unwrap().is_ok());
        }
        assert!(m.is_empty());
    }
}
