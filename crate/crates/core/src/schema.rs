use std::fmt;
use std::time::Duration;

use chrono::{DateTime, NaiveDateTime};

use crate::codec::{DecodeError, Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{Chronon, ChrononScale, ValueType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PropertyId(pub u32);

impl fmt::Display for PropertyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tp{}", self.0)
    }
}

/// Declaration of a temporal property: value type, chronon scale and the
/// wall-clock instant of tick 0 (used to translate query timestamps).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PropertyDef {
    pub id: PropertyId,
    pub name: String,
    pub value_type: ValueType,
    pub scale: ChrononScale,
    pub epoch: NaiveDateTime,
}

/// Options for declaring a temporal property.
#[derive(Clone, Debug)]
pub struct PropertySpec {
    pub name: String,
    pub value_type: ValueType,
    pub scale: ChrononScale,
    pub epoch: NaiveDateTime,
}

impl PropertySpec {
    /// Minute chronons counted from the Unix epoch.
    pub fn new(name: impl Into<String>, value_type: ValueType) -> Self {
        PropertySpec {
            name: name.into(),
            value_type,
            scale: ChrononScale::MINUTE,
            epoch: DateTime::UNIX_EPOCH.naive_utc(),
        }
    }

    pub fn scale(mut self, scale: ChrononScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn epoch(mut self, epoch: NaiveDateTime) -> Self {
        self.epoch = epoch;
        self
    }
}

impl PropertyDef {
    /// Translates a wall-clock timestamp into this property's chronon.
    pub fn chronon_of(&self, ts: NaiveDateTime) -> Result<Chronon> {
        let delta = ts.signed_duration_since(self.epoch);
        let d = delta
            .to_std()
            .map_err(|_| Error::Type(format!("timestamp {ts} precedes the epoch of `{}`", self.name)))?;
        let ticks = self.scale.ticks_in(d).map_err(|_| {
            Error::Type(format!(
                "timestamp {ts} is not aligned to the chronon of `{}`",
                self.name
            ))
        })?;
        Chronon::from_raw(ticks).checked_add(0).map_err(Error::from)
    }

    pub fn timestamp_of(&self, c: Chronon) -> Option<NaiveDateTime> {
        if c.is_now() {
            return None;
        }
        let nanos = self.scale.unit().as_nanos().checked_mul(u128::from(c.tick()))?;
        let d = Duration::from_nanos(u64::try_from(nanos).ok()?);
        self.epoch.checked_add_signed(chrono::Duration::from_std(d).ok()?)
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.put_u32(self.id.0);
        w.put_str(&self.name);
        w.put_u8(self.value_type.tag());
        w.put_u64(self.scale.unit().as_secs());
        w.put_u32(self.scale.unit().subsec_nanos());
        w.put_i64(self.epoch.and_utc().timestamp());
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let id = PropertyId(r.u32()?);
        let name = r.str()?;
        let tag = r.u8()?;
        let value_type = ValueType::from_tag(tag).ok_or(DecodeError::BadTag(tag))?;
        let secs = r.u64()?;
        let nanos = r.u32()?;
        let scale = ChrononScale::new(Duration::new(secs, nanos)).map_err(|_| DecodeError::Truncated)?;
        let epoch = DateTime::from_timestamp(r.i64()?, 0)
            .ok_or(DecodeError::Truncated)?
            .naive_utc();
        Ok(PropertyDef {
            id,
            name,
            value_type,
            scale,
            epoch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn def() -> PropertyDef {
        PropertyDef {
            id: PropertyId(0),
            name: "travel_time".into(),
            value_type: ValueType::Int,
            scale: ChrononScale::MINUTE,
            epoch: NaiveDate::from_ymd_opt(2010, 5, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
        }
    }

    #[test]
    fn timestamps_map_to_minute_ticks() {
        let d = def();
        let ts = NaiveDate::from_ymd_opt(2010, 5, 1).unwrap().and_hms_opt(8, 0, 0).unwrap();
        assert_eq!(d.chronon_of(ts).unwrap(), Chronon::new(480));
        assert_eq!(d.timestamp_of(Chronon::new(480)), Some(ts));
        let unaligned = NaiveDate::from_ymd_opt(2010, 5, 1).unwrap().and_hms_opt(8, 0, 30).unwrap();
        assert!(d.chronon_of(unaligned).is_err());
        let early = NaiveDate::from_ymd_opt(2010, 4, 30).unwrap().and_hms_opt(8, 0, 0).unwrap();
        assert!(d.chronon_of(early).is_err());
    }

    #[test]
    fn def_roundtrip() {
        let d = def();
        let mut w = Writer::new();
        d.encode(&mut w);
        let buf = w.into_inner();
        assert_eq!(PropertyDef::decode(&mut Reader::new(&buf)).unwrap(), d);
    }
}
