use std::fmt;

use super::{Chronon, TimeError};

/// Half-open chronon range `[start, end)`; `end` may be NOW.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeInterval {
    start: Chronon,
    end: Chronon,
}

impl TimeInterval {
    pub fn new(start: Chronon, end: Chronon) -> Result<Self, TimeError> {
        if start >= end {
            return Err(TimeError::InvalidInterval { start, end });
        }
        Ok(TimeInterval { start, end })
    }

    /// Convenience constructor over raw ticks; `end == u64::MAX` means NOW.
    pub fn ticks(start: u64, end: u64) -> Result<Self, TimeError> {
        Self::new(Chronon::from_raw(start), Chronon::from_raw(end))
    }

    /// `[start, NOW)`.
    pub fn since(start: Chronon) -> Result<Self, TimeError> {
        Self::new(start, Chronon::NOW)
    }

    /// The whole timeline `[0, NOW)`.
    pub const ALL: TimeInterval = TimeInterval {
        start: Chronon::ZERO,
        end: Chronon::NOW,
    };

    pub fn start(&self) -> Chronon {
        self.start
    }

    pub fn end(&self) -> Chronon {
        self.end
    }

    pub fn is_open(&self) -> bool {
        self.end.is_now()
    }

    /// Number of chronons covered, `None` when the interval runs to NOW.
    pub fn duration(&self) -> Option<u64> {
        if self.is_open() {
            None
        } else {
            Some(self.end.tick() - self.start.tick())
        }
    }

    pub fn contains(&self, t: Chronon) -> bool {
        self.start <= t && t < self.end
    }

    pub fn overlaps(&self, other: &TimeInterval) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn covers(&self, other: &TimeInterval) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Intersection of two intervals.
    pub fn intersect(&self, other: &TimeInterval) -> Option<TimeInterval> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start < end).then_some(TimeInterval { start, end })
    }

    /// Intersection of one or more intervals; `None` when empty (including
    /// for an empty input list).
    pub fn intersection(intervals: &[TimeInterval]) -> Option<TimeInterval> {
        let (first, rest) = intervals.split_first()?;
        rest.iter().try_fold(*first, |acc, iv| acc.intersect(iv))
    }

    /// Union of continuous intervals. Inputs are sorted by start first; each
    /// interval must begin exactly where the previous one ends.
    pub fn union(intervals: &[TimeInterval]) -> Result<TimeInterval, TimeError> {
        let mut sorted = intervals.to_vec();
        sorted.sort();
        let (first, rest) = sorted.split_first().ok_or(TimeError::EmptyInput)?;
        let mut acc = *first;
        for iv in rest {
            if iv.start != acc.end {
                return Err(TimeError::Gap { at: acc.end });
            }
            acc.end = iv.end;
        }
        Ok(acc)
    }

    /// Portions of `self` not covered by `other`, ascending. Zero, one or two
    /// intervals.
    pub fn diff(&self, other: &TimeInterval) -> Vec<TimeInterval> {
        if !self.overlaps(other) {
            return vec![*self];
        }
        let mut out = Vec::with_capacity(2);
        if self.start < other.start {
            out.push(TimeInterval {
                start: self.start,
                end: other.start,
            });
        }
        if other.end < self.end {
            out.push(TimeInterval {
                start: other.end,
                end: self.end,
            });
        }
        out
    }

    /// Moves the start to `to`, keeping the duration.
    pub fn shift(&self, to: Chronon) -> Result<TimeInterval, TimeError> {
        let dur = self.duration().ok_or(TimeError::InfiniteDuration)?;
        let end = to.checked_add(dur)?;
        TimeInterval::new(to, end)
    }
}

impl fmt::Debug for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
