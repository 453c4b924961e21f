use std::fmt;
use std::time::Duration;

use super::TimeError;

/// A discrete, indivisible time tick.
///
/// Ticks are ordinals under the owning property's [`ChrononScale`]. The
/// reserved tick [`Chronon::NOW`] is the open-ended "latest" chronon: it orders
/// after every other tick and takes no part in arithmetic.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Chronon(u64);

impl Chronon {
    pub const NOW: Chronon = Chronon(u64::MAX);
    pub const ZERO: Chronon = Chronon(0);

    /// Panics if `tick` is the reserved NOW sentinel value; use
    /// [`Chronon::NOW`] for that.
    pub const fn new(tick: u64) -> Self {
        assert!(tick != u64::MAX, "u64::MAX is reserved for NOW");
        Chronon(tick)
    }

    /// Builds a chronon from a raw tick, mapping `u64::MAX` to NOW.
    pub const fn from_raw(tick: u64) -> Self {
        Chronon(tick)
    }

    pub const fn tick(self) -> u64 {
        self.0
    }

    pub const fn is_now(self) -> bool {
        self.0 == u64::MAX
    }

    /// `self + ticks`. NOW is rejected and so is any result that would land on
    /// or past the NOW sentinel.
    pub fn checked_add(self, ticks: u64) -> Result<Chronon, TimeError> {
        if self.is_now() {
            return Err(TimeError::InfiniteDuration);
        }
        match self.0.checked_add(ticks) {
            Some(t) if t != u64::MAX => Ok(Chronon(t)),
            _ => Err(TimeError::Overflow),
        }
    }

    /// Adds a chronon count, saturating just below NOW.
    pub fn saturating_add(self, ticks: u64) -> Chronon {
        if self.is_now() {
            return self;
        }
        Chronon(self.0.saturating_add(ticks).min(u64::MAX - 1))
    }

    /// The following tick; `None` for NOW and for the last finite tick.
    pub fn succ(self) -> Option<Chronon> {
        self.checked_add(1).ok()
    }
}

impl fmt::Debug for Chronon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Chronon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_now() {
            f.write_str("NOW")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl From<u64> for Chronon {
    fn from(t: u64) -> Self {
        Chronon::from_raw(t)
    }
}

/// Physical duration of one chronon of a temporal property.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChrononScale {
    unit: Duration,
}

impl ChrononScale {
    pub const SECOND: ChrononScale = ChrononScale {
        unit: Duration::from_secs(1),
    };
    pub const MINUTE: ChrononScale = ChrononScale {
        unit: Duration::from_secs(60),
    };
    pub const HOUR: ChrononScale = ChrononScale {
        unit: Duration::from_secs(3600),
    };

    pub fn new(unit: Duration) -> Result<Self, TimeError> {
        if unit.is_zero() {
            return Err(TimeError::ZeroScale);
        }
        Ok(ChrononScale { unit })
    }

    pub fn from_secs(secs: u64) -> Result<Self, TimeError> {
        Self::new(Duration::from_secs(secs))
    }

    pub fn unit(&self) -> Duration {
        self.unit
    }

    /// Number of ticks covering `d`, or an error when `d` is not a whole
    /// multiple of the unit.
    pub fn ticks_in(&self, d: Duration) -> Result<u64, TimeError> {
        let unit = self.unit.as_nanos();
        let total = d.as_nanos();
        if !total.is_multiple_of(unit) {
            return Err(TimeError::NonIntegralConversion);
        }
        u64::try_from(total / unit).map_err(|_| TimeError::Overflow)
    }

    /// Re-expresses a tick of `self` as a tick of `other`.
    pub fn convert(&self, tick: Chronon, other: &ChrononScale) -> Result<Chronon, TimeError> {
        if tick.is_now() {
            return Ok(Chronon::NOW);
        }
        let nanos = self
            .unit
            .as_nanos()
            .checked_mul(u128::from(tick.tick()))
            .ok_or(TimeError::Overflow)?;
        let unit = other.unit.as_nanos();
        if nanos % unit != 0 {
            return Err(TimeError::NonIntegralConversion);
        }
        let t = u64::try_from(nanos / unit).map_err(|_| TimeError::Overflow)?;
        if t == u64::MAX {
            return Err(TimeError::Overflow);
        }
        Ok(Chronon(t))
    }
}
