//! Graph operations built on transaction reads and writes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{Direction, EntityId};
use crate::model::{Chronon, TimeError, TimeInterval, TimeIntervalSeries, Value, ValueType};
use crate::schema::PropertyDef;
use crate::txn::Transaction;

/// User-defined fold over the entries of a series slice.
pub type Fold = Arc<dyn Fn(&[(TimeInterval, Value)]) -> Result<Option<Value>> + Send + Sync>;

#[derive(Clone)]
pub enum Aggregate {
    Min,
    Max,
    /// Duration-weighted mean; open-ended windows are rejected.
    Avg,
    Custom(Fold),
}

impl fmt::Debug for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregate::Min => f.write_str("Min"),
            Aggregate::Max => f.write_str("Max"),
            Aggregate::Avg => f.write_str("Avg"),
            Aggregate::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Quantifier {
    /// Some chronon of the window has a value in range.
    #[default]
    Exists,
    /// Every chronon of the window has a value, all in range.
    ForAll,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReachableResult {
    /// Earliest arrival of every node reached before `τ_s + dur`.
    pub arrivals: BTreeMap<u64, Chronon>,
    /// Nodes in the order they were taken off the frontier.
    pub settled: Vec<u64>,
    /// Nodes whose outgoing edges were scanned.
    pub expanded: Vec<u64>,
}

fn numeric_property(def: &PropertyDef) -> Result<()> {
    if def.value_type.is_numeric() {
        Ok(())
    } else {
        Err(Error::Type(format!(
            "temporal property `{}` holds {} values, not numbers",
            def.name, def.value_type
        )))
    }
}

/// Single `setTP`.
pub fn q_update(txn: &mut Transaction<'_>, e: EntityId, tp: &str, iv: TimeInterval, v: Value) -> Result<()> {
    txn.set_tp(e, tp, iv, v)
}

/// The latest non-NOW chronon of a series whose last entry is `last`.
fn latest_chronon(last: &TimeInterval) -> Chronon {
    if last.is_open() {
        last.start()
    } else {
        Chronon::from_raw(last.end().tick() - 1)
    }
}

/// A batch of `setTP` calls with strictly increasing, disjoint intervals that
/// all start after the stored series' latest chronon.
pub fn q_append(txn: &mut Transaction<'_>, e: EntityId, tp: &str, items: &[(TimeInterval, Value)]) -> Result<()> {
    for w in items.windows(2) {
        let (a, b) = (w[0].0, w[1].0);
        if a.start() >= b.start() || a.overlaps(&b) {
            return Err(Error::AppendOrder(format!("{a} is not followed by a later disjoint interval {b}")));
        }
    }
    let Some((first, _)) = items.first() else {
        return Ok(());
    };
    let def = txn.property(tp)?;
    if let Some((last, _)) = txn.latest(e, def.id)? {
        let t_max = latest_chronon(&last);
        if t_max >= first.start() {
            return Err(Error::AppendOrder(format!(
                "{first} starts at or before the latest stored chronon {t_max}"
            )));
        }
    }
    for (iv, v) in items {
        txn.set_tp(e, tp, *iv, v.clone())?;
    }
    Ok(())
}

/// Single `getTP`.
pub fn q_entity_history(txn: &Transaction<'_>, e: EntityId, tp: &str, iv: TimeInterval) -> Result<TimeIntervalSeries> {
    txn.get_tp(e, tp, iv)
}

/// Value of `tp` at chronon `t` on every entity carrying it.
pub fn q_snapshot(txn: &Transaction<'_>, tp: &str, t: Chronon) -> Result<BTreeMap<EntityId, Value>> {
    if t.is_now() {
        return Err(TimeError::NowIsNotAnInstant.into());
    }
    let def = txn.property(tp)?;
    let point = TimeInterval::new(t, Chronon::from_raw(t.tick() + 1))?;
    let mut out = BTreeMap::new();
    for e in txn.entities_with(def.id)? {
        match txn.history(e, def.id, point) {
            Ok(s) => {
                if let Some((_, v)) = s.into_entries().pop() {
                    out.insert(e, v);
                }
            }
            // Deleted between listing and reading.
            Err(Error::UnknownNode(_) | Error::UnknownEdge(_)) => {}
            Err(err) => return Err(err),
        }
    }
    Ok(out)
}

fn extreme(entries: &[(TimeInterval, Value)], want: Ordering) -> Option<Value> {
    entries
        .iter()
        .map(|(_, v)| v)
        .reduce(|best, v| match v.numeric_cmp(best) {
            Some(o) if o == want => v,
            _ => best,
        })
        .cloned()
}

/// Applies `f` to a series slice. `None` means the slice was empty.
pub fn aggregate(entries: &[(TimeInterval, Value)], f: &Aggregate, value_type: ValueType) -> Result<Option<Value>> {
    if let Aggregate::Custom(fold) = f {
        return if entries.is_empty() { Ok(None) } else { fold(entries) };
    }
    if !value_type.is_numeric() {
        return Err(Error::Type(format!("{f:?} needs a numeric property, found {value_type}")));
    }
    if entries.is_empty() {
        return Ok(None);
    }
    Ok(match f {
        Aggregate::Min => extreme(entries, Ordering::Less),
        Aggregate::Max => extreme(entries, Ordering::Greater),
        Aggregate::Avg => {
            let mut total = 0.0;
            let mut ticks = 0u64;
            for (iv, v) in entries {
                let d = iv.duration().ok_or(TimeError::InfiniteDuration)?;
                total += v.as_f64().unwrap() * d as f64;
                ticks += d;
            }
            Some(Value::Float(total / ticks as f64))
        }
        Aggregate::Custom(_) => unreachable!(),
    })
}

/// Per-entity aggregate of `tp` over `iv`; entities with no data in `iv`
/// are omitted.
pub fn q_gatp(txn: &Transaction<'_>, tp: &str, iv: TimeInterval, f: &Aggregate) -> Result<BTreeMap<EntityId, Value>> {
    let def = txn.property(tp)?;
    if !matches!(f, Aggregate::Custom(_)) {
        numeric_property(&def)?;
    }
    let mut out = BTreeMap::new();
    for e in txn.entities_with(def.id)? {
        let s = match txn.history(e, def.id, iv) {
            Ok(s) => s,
            Err(Error::UnknownNode(_) | Error::UnknownEdge(_)) => continue,
            Err(err) => return Err(err),
        };
        if let Some(v) = aggregate(s.entries(), f, def.value_type)? {
            out.insert(e, v);
        }
    }
    Ok(out)
}

/// Whether a series slice over `iv` satisfies the value-range predicate.
pub fn within(s: &TimeIntervalSeries, iv: TimeInterval, lo: &Value, hi: &Value, q: Quantifier) -> bool {
    let in_range = |v: &Value| {
        matches!(v.numeric_cmp(lo), Some(Ordering::Greater | Ordering::Equal))
            && matches!(v.numeric_cmp(hi), Some(Ordering::Less | Ordering::Equal))
    };
    match q {
        Quantifier::Exists => s.entries().iter().any(|(_, v)| in_range(v)),
        Quantifier::ForAll => {
            let mut cursor = iv.start();
            for (e, v) in s.entries() {
                if e.start() != cursor || !in_range(v) {
                    return false;
                }
                cursor = e.end();
            }
            cursor == iv.end()
        }
    }
}

fn check_bounds(lo: &Value, hi: &Value) -> Result<()> {
    match lo.numeric_cmp(hi) {
        Some(Ordering::Less | Ordering::Equal) => Ok(()),
        Some(Ordering::Greater) => Err(Error::Type(format!("empty value range [{lo}, {hi}]"))),
        None => Err(Error::Type(format!("value range [{lo}, {hi}] is not numeric"))),
    }
}

/// Entities whose `tp` takes a value in `[lo, hi]` during `iv`.
pub fn q_etpc(
    txn: &Transaction<'_>,
    tp: &str,
    iv: TimeInterval,
    lo: &Value,
    hi: &Value,
    q: Quantifier,
) -> Result<Vec<EntityId>> {
    let def = txn.property(tp)?;
    numeric_property(&def)?;
    check_bounds(lo, hi)?;
    let mut out = Vec::new();
    for e in txn.entities_with(def.id)? {
        let s = match txn.history(e, def.id, iv) {
            Ok(s) => s,
            Err(Error::UnknownNode(_) | Error::UnknownEdge(_)) => continue,
            Err(err) => return Err(err),
        };
        if within(&s, iv, lo, hi, q) {
            out.push(e);
        }
    }
    Ok(out)
}

/// Travel time as a whole number of chronons; fractional values round up.
fn travel_ticks(v: &Value) -> Result<u64> {
    match v {
        Value::Int(i) if *i >= 0 => Ok(*i as u64),
        Value::Float(f) if *f >= 0.0 && f.is_finite() => Ok(f.ceil() as u64),
        other => Err(Error::Type(format!("travel time {other} is not a non-negative number"))),
    }
}

/// Earliest arrival over edge `r` departing in `[t0, t1)`; `t1` when no
/// departure in the window arrives earlier.
fn earliest_arr_time(txn: &Transaction<'_>, r: u64, def: &PropertyDef, t0: Chronon, t1: Chronon) -> Result<Chronon> {
    let mut arrive = t1;
    let s = txn.history(EntityId::Edge(r), def.id, TimeInterval::new(t0, t1)?)?;
    for (iv, val) in s.entries() {
        let at = iv.start().saturating_add(travel_ticks(val)?);
        arrive = arrive.min(at);
    }
    Ok(arrive)
}

/// Nodes reachable from `vs` within `dur` chronons departing at `ts`, with
/// earliest arrival times; edge travel times come from `travel_tp`.
pub fn q_reachable_area(
    txn: &Transaction<'_>,
    vs: u64,
    ts: Chronon,
    dur: u64,
    travel_tp: &str,
) -> Result<ReachableResult> {
    if dur == 0 {
        return Err(Error::Type("reachable area needs a positive duration".into()));
    }
    if !txn.node_exists(vs)? {
        return Err(Error::UnknownNode(vs));
    }
    let def = txn.property(travel_tp)?;
    numeric_property(&def)?;
    let t_max = ts.checked_add(dur)?;

    let mut frontier: BTreeSet<(Chronon, u64)> = BTreeSet::new();
    let mut settled: BTreeSet<u64> = BTreeSet::new();
    let mut arrivals: BTreeMap<u64, Chronon> = BTreeMap::new();
    let mut result = ReachableResult::default();
    frontier.insert((ts, vs));
    arrivals.insert(vs, ts);

    while let Some((t_n, vn)) = frontier.pop_first() {
        settled.insert(vn);
        result.settled.push(vn);
        if t_n >= t_max {
            continue;
        }
        result.expanded.push(vn);
        for r in txn.get_rel(vn, Direction::Outgoing, &[] as &[&str])? {
            let (_, v) = txn.endpoints(r)?;
            if settled.contains(&v) {
                continue;
            }
            let tv = earliest_arr_time(txn, r, &def, t_n, t_max)?;
            match arrivals.get(&v).copied() {
                Some(old) => {
                    if tv < old {
                        frontier.remove(&(old, v));
                        frontier.insert((tv, v));
                        arrivals.insert(v, tv);
                    }
                }
                None => {
                    frontier.insert((tv, v));
                    arrivals.insert(v, tv);
                }
            }
        }
    }
    arrivals.retain(|_, t| *t < t_max);
    result.arrivals = arrivals;
    Ok(result)
}
