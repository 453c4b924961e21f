//! Time Interval Series: an ordered, disjoint, coalesced list of
//! `(interval, value)` entries read under point-based semantics, i.e. as a
//! partial function from chronons to values.
//!
//! The series is generic over its payload so storage layers can reuse the
//! same algebra for overlay series (`Option<Value>`, where `None` marks an
//! explicit gap that shadows older data).

use super::{Chronon, TimeError, TimeInterval, Value, ValueType};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeIntervalSeries<V = Value> {
    entries: Vec<(TimeInterval, V)>,
}

impl<V> Default for TimeIntervalSeries<V> {
    fn default() -> Self {
        TimeIntervalSeries {
            entries: Vec::new(),
        }
    }
}

impl<V: Clone + PartialEq> TimeIntervalSeries<V> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a canonical series from sorted, disjoint entries, merging
    /// contiguous equal-valued neighbours.
    pub fn coalesce(entries: Vec<(TimeInterval, V)>) -> Result<Self, TimeError> {
        for w in entries.windows(2) {
            if w[1].0.start() < w[0].0.end() {
                return Err(TimeError::Overlap {
                    first: w[0].0,
                    second: w[1].0,
                });
            }
        }
        let mut out: Vec<(TimeInterval, V)> = Vec::with_capacity(entries.len());
        for (iv, v) in entries {
            push_coalesced(&mut out, iv, v);
        }
        Ok(TimeIntervalSeries { entries: out })
    }

    /// Appends an entry that starts at or after the current end. Panics on
    /// overlap; storage decoders use this for already-ordered input.
    pub(crate) fn push_back(&mut self, iv: TimeInterval, v: V) {
        if let Some((last, _)) = self.entries.last() {
            assert!(last.end() <= iv.start(), "push_back out of order");
        }
        push_coalesced(&mut self.entries, iv, v);
    }

    pub fn entries(&self) -> &[(TimeInterval, V)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(TimeInterval, V)> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first(&self) -> Option<&(TimeInterval, V)> {
        self.entries.first()
    }

    pub fn last(&self) -> Option<&(TimeInterval, V)> {
        self.entries.last()
    }

    /// `[min start, max end)` of the series.
    pub fn span(&self) -> Option<TimeInterval> {
        let s = self.entries.first()?.0.start();
        let e = self.entries.last()?.0.end();
        TimeInterval::new(s, e).ok()
    }

    /// Index range of entries overlapping `iv`.
    fn overlapping(&self, iv: &TimeInterval) -> (usize, usize) {
        let lo = self.entries.partition_point(|(e, _)| e.end() <= iv.start());
        let hi = self.entries.partition_point(|(e, _)| e.start() < iv.end());
        (lo, hi.max(lo))
    }

    /// Point-based overwrite: every chronon of `iv` maps to `v` afterwards,
    /// everything outside `iv` keeps its mapping.
    pub fn overwrite(&mut self, iv: TimeInterval, v: V) {
        self.splice(iv, Some(v));
    }

    /// Removes every mapping inside `iv`.
    pub fn clear_range(&mut self, iv: TimeInterval) {
        self.splice(iv, None);
    }

    fn splice(&mut self, iv: TimeInterval, v: Option<V>) {
        let (lo, hi) = self.overlapping(&iv);
        let mut replacement: Vec<(TimeInterval, V)> = Vec::with_capacity(3);
        if lo < hi {
            let (first_iv, first_v) = &self.entries[lo];
            if first_iv.start() < iv.start() {
                let left = TimeInterval::new(first_iv.start(), iv.start()).expect("left remainder");
                replacement.push((left, first_v.clone()));
            }
        }
        if let Some(v) = v {
            replacement.push((iv, v));
        }
        if lo < hi {
            let (last_iv, last_v) = &self.entries[hi - 1];
            if last_iv.end() > iv.end() {
                let right = TimeInterval::new(iv.end(), last_iv.end()).expect("right remainder");
                replacement.push((right, last_v.clone()));
            }
        }
        let inserted = replacement.len();
        self.entries.splice(lo..hi, replacement);
        // Only the seams around the replaced window can need coalescing.
        let from = lo.saturating_sub(1);
        let to = (lo + inserted + 1).min(self.entries.len());
        self.coalesce_window(from, to);
    }

    fn coalesce_window(&mut self, from: usize, to: usize) {
        if to <= from + 1 {
            return;
        }
        let mut merged: Vec<(TimeInterval, V)> = Vec::with_capacity(to - from);
        for (iv, v) in self.entries.drain(from..to) {
            push_coalesced(&mut merged, iv, v);
        }
        self.entries.splice(from..from, merged);
    }

    /// The series restricted to `iv`; boundary entries are truncated.
    pub fn slice(&self, iv: TimeInterval) -> Self {
        let (lo, hi) = self.overlapping(&iv);
        let entries = self.entries[lo..hi]
            .iter()
            .filter_map(|(e, v)| e.intersect(&iv).map(|x| (x, v.clone())))
            .collect();
        TimeIntervalSeries { entries }
    }

    /// Value at chronon `t`. NOW is an open endpoint rather than an instant
    /// and is rejected.
    pub fn value_at(&self, t: Chronon) -> Result<Option<&V>, TimeError> {
        if t.is_now() {
            return Err(TimeError::NowIsNotAnInstant);
        }
        let idx = self.entries.partition_point(|(e, _)| e.end() <= t);
        Ok(self
            .entries
            .get(idx)
            .filter(|(e, _)| e.contains(t))
            .map(|(_, v)| v))
    }

    /// Values of `slice(iv)` in entry order, duplicates preserved.
    pub fn value_list(&self, iv: TimeInterval) -> Vec<V> {
        let (lo, hi) = self.overlapping(&iv);
        self.entries[lo..hi].iter().map(|(_, v)| v.clone()).collect()
    }

    /// Overlays `top` on `self`: wherever `top` maps a chronon, its value wins.
    pub fn overlay(&mut self, top: &TimeIntervalSeries<V>) {
        for (iv, v) in &top.entries {
            self.overwrite(*iv, v.clone());
        }
    }

    pub fn map<W: Clone + PartialEq>(&self, mut f: impl FnMut(&V) -> W) -> TimeIntervalSeries<W> {
        let mut out = TimeIntervalSeries::new();
        for (iv, v) in &self.entries {
            push_coalesced(&mut out.entries, *iv, f(v));
        }
        out
    }

    pub fn filter_map<W: Clone + PartialEq>(
        &self,
        mut f: impl FnMut(&V) -> Option<W>,
    ) -> TimeIntervalSeries<W> {
        let mut out = TimeIntervalSeries::new();
        for (iv, v) in &self.entries {
            if let Some(w) = f(v) {
                push_coalesced(&mut out.entries, *iv, w);
            }
        }
        out
    }
}

impl TimeIntervalSeries<Value> {
    /// Type tag of the stored values; `None` for an empty series.
    pub fn value_type(&self) -> Option<ValueType> {
        self.entries.first().map(|(_, v)| v.value_type())
    }

    /// Typed point-based overwrite.
    pub fn set(&mut self, iv: TimeInterval, v: Value) -> Result<(), TimeError> {
        if let Some(expected) = self.value_type() {
            if expected != v.value_type() {
                return Err(TimeError::TypeMismatch {
                    expected,
                    found: v.value_type(),
                });
            }
        }
        self.overwrite(iv, v);
        Ok(())
    }
}

fn push_coalesced<V: PartialEq>(out: &mut Vec<(TimeInterval, V)>, iv: TimeInterval, v: V) {
    if let Some((last_iv, last_v)) = out.last_mut() {
        if last_iv.end() == iv.start() && *last_v == v {
            *last_iv = TimeInterval::new(last_iv.start(), iv.end()).expect("contiguous union");
            return;
        }
    }
    out.push((iv, v));
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    const NOW: u64 = u64::MAX;

    fn iv(s: u64, e: u64) -> TimeInterval {
        TimeInterval::ticks(s, e).unwrap()
    }

    fn s(x: &str) -> Value {
        Value::Str(x.into())
    }

    /// The road "status" series: 08:00 slow, 08:15 jam, 08:20 smooth,
    /// 08:45 slow until NOW, with minute chronons and 08:00 = tick 480.
    fn status() -> TimeIntervalSeries {
        TimeIntervalSeries::coalesce(vec![
            (iv(480, 495), s("slow")),
            (iv(495, 500), s("jam")),
            (iv(500, 525), s("smooth")),
            (iv(525, NOW), s("slow")),
        ])
        .unwrap()
    }

    #[test]
    fn set_jam_from_0818_until_now() {
        let mut psi = status();
        psi.set(iv(498, NOW), s("jam")).unwrap();
        assert_eq!(
            psi.entries(),
            &[(iv(480, 495), s("slow")), (iv(495, NOW), s("jam"))]
        );
        let sliced = psi.slice(iv(490, NOW));
        assert_eq!(
            sliced.entries(),
            &[(iv(490, 495), s("slow")), (iv(495, NOW), s("jam"))]
        );
        assert_eq!(psi.value_list(iv(490, NOW)), vec![s("slow"), s("jam")]);
    }

    #[test]
    fn set_into_empty_and_adjacent_coalesces() {
        let mut psi = TimeIntervalSeries::new();
        psi.set(iv(1, 4), s("v")).unwrap();
        assert_eq!(psi.entries(), &[(iv(1, 4), s("v"))]);
        psi.set(iv(4, 9), s("v")).unwrap();
        assert_eq!(psi.entries(), &[(iv(1, 9), s("v"))]);
    }

    #[test]
    fn set_rejects_type_change() {
        let mut psi = TimeIntervalSeries::new();
        psi.set(iv(1, 4), Value::Int(3)).unwrap();
        assert_eq!(
            psi.set(iv(5, 6), s("x")),
            Err(TimeError::TypeMismatch {
                expected: ValueType::Int,
                found: ValueType::Str
            })
        );
    }

    #[test]
    fn interior_update_splits_entry() {
        let mut psi = TimeIntervalSeries::coalesce(vec![(iv(0, 10), Value::Int(1))]).unwrap();
        psi.set(iv(3, 5), Value::Int(2)).unwrap();
        assert_eq!(
            psi.entries(),
            &[
                (iv(0, 3), Value::Int(1)),
                (iv(3, 5), Value::Int(2)),
                (iv(5, 10), Value::Int(1))
            ]
        );
        psi.set(iv(3, 5), Value::Int(1)).unwrap();
        assert_eq!(psi.entries(), &[(iv(0, 10), Value::Int(1))]);
    }

    #[test]
    fn slice_edge_cases() {
        let psi = status();
        assert!(psi.slice(iv(0, 100)).is_empty());
        assert_eq!(psi.slice(psi.span().unwrap()), psi);
    }

    #[test]
    fn value_at_examples() {
        let psi = TimeIntervalSeries::coalesce(vec![(iv(1, 4), s("a")), (iv(6, 9), s("b"))]).unwrap();
        assert_eq!(psi.value_at(Chronon::new(5)).unwrap(), None);
        assert_eq!(psi.value_at(Chronon::new(1)).unwrap(), Some(&s("a")));
        assert_eq!(psi.value_at(Chronon::new(4)).unwrap(), None);
        assert_eq!(psi.value_at(Chronon::NOW), Err(TimeError::NowIsNotAnInstant));
    }

    #[test]
    fn value_list_examples() {
        let psi = TimeIntervalSeries::coalesce(vec![(iv(1, 4), s("a"))]).unwrap();
        assert!(psi.value_list(iv(10, 20)).is_empty());
        assert_eq!(psi.value_list(iv(2, 3)), vec![s("a")]);
    }

    #[test]
    fn entry_examples() {
        let one = TimeIntervalSeries::coalesce(vec![(iv(1, 4), s("a"))]).unwrap();
        assert_eq!(one.entries(), &[(iv(1, 4), s("a"))]);
        assert!(TimeIntervalSeries::<Value>::new().entries().is_empty());
        let st = status();
        assert_eq!(st.len(), 4);
        assert_eq!(st.entries()[3], (iv(525, NOW), s("slow")));
    }

    #[test]
    fn coalesce_examples() {
        let v = s("v");
        let w = s("w");
        assert_eq!(
            TimeIntervalSeries::coalesce(vec![(iv(1, 4), v.clone()), (iv(4, 9), v.clone())])
                .unwrap()
                .entries(),
            &[(iv(1, 9), v.clone())]
        );
        assert_eq!(
            TimeIntervalSeries::coalesce(vec![(iv(1, 4), v.clone()), (iv(4, 9), w.clone())])
                .unwrap()
                .len(),
            2
        );
        assert_eq!(
            TimeIntervalSeries::coalesce(vec![(iv(1, 4), v.clone()), (iv(6, 9), v.clone())])
                .unwrap()
                .len(),
            2
        );
        assert!(matches!(
            TimeIntervalSeries::coalesce(vec![(iv(1, 5), v.clone()), (iv(4, 9), w)]),
            Err(TimeError::Overlap { .. })
        ));
    }

    #[derive(Clone, Debug)]
    enum Op {
        Set(u64, u64, i64),
        Clear(u64, u64),
    }

    fn arb_op() -> impl Strategy<Value = Op> {
        prop_oneof![
            4 => (0u64..120, 1u64..40, 0i64..4).prop_map(|(s, d, v)| Op::Set(s, s + d, v)),
            1 => (0u64..120, 1u64..40).prop_map(|(s, d)| Op::Clear(s, s + d)),
        ]
    }

    fn is_canonical<V: Clone + PartialEq>(psi: &TimeIntervalSeries<V>) -> bool {
        psi.entries().windows(2).all(|w| {
            w[0].0.end() <= w[1].0.start() && !(w[0].0.end() == w[1].0.start() && w[0].1 == w[1].1)
        })
    }

    proptest! {
        #[test]
        fn matches_per_chronon_oracle(ops in prop::collection::vec(arb_op(), 1..60)) {
            let mut psi: TimeIntervalSeries<i64> = TimeIntervalSeries::new();
            let mut oracle: BTreeMap<u64, i64> = BTreeMap::new();
            for op in &ops {
                match *op {
                    Op::Set(s, e, v) => {
                        psi.overwrite(iv(s, e), v);
                        for t in s..e { oracle.insert(t, v); }
                    }
                    Op::Clear(s, e) => {
                        psi.clear_range(iv(s, e));
                        for t in s..e { oracle.remove(&t); }
                    }
                }
                prop_assert!(is_canonical(&psi));
            }
            for t in 0..170 {
                prop_assert_eq!(psi.value_at(Chronon::new(t)).unwrap(), oracle.get(&t));
            }
            // Canonical form is a fixpoint of coalescing.
            let again = TimeIntervalSeries::coalesce(psi.entries().to_vec()).unwrap();
            prop_assert_eq!(&again, &psi);
            // Slices agree with the full series pointwise.
            let window = iv(30, 90);
            let sl = psi.slice(window);
            for t in 30..90 {
                let c = Chronon::new(t);
                prop_assert_eq!(sl.value_at(c).unwrap(), psi.value_at(c).unwrap());
            }
            prop_assert!(sl.entries().iter().all(|(e, _)| window.covers(e)));
        }
    }
}
