//! Little-endian binary encoding shared by the record file, chunk files,
//! metadata catalog and WAL.

use crate::graph::EntityId;
use crate::model::{Chronon, TimeInterval, Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("unexpected end of input")]
    Truncated,
    #[error("unknown tag {0}")]
    BadTag(u8),
    #[error("invalid utf-8")]
    Utf8,
    #[error("invalid interval")]
    Interval,
}

/// Tag used for the tombstone ("no value") marker in optional values.
pub(crate) const TOMBSTONE_TAG: u8 = 0;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Writer {
            buf: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn put_str(&mut self, s: &str) {
        self.put_u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn put_uvarint(&mut self, mut v: u64) {
        while v >= 0x80 {
            self.buf.push((v as u8) | 0x80);
            v >>= 7;
        }
        self.buf.push(v as u8);
    }

    pub fn put_ivarint(&mut self, v: i64) {
        self.put_uvarint(((v << 1) ^ (v >> 63)) as u64);
    }

    pub fn put_chronon(&mut self, c: Chronon) {
        self.put_u64(c.tick());
    }

    pub fn put_interval(&mut self, iv: TimeInterval) {
        self.put_chronon(iv.start());
        self.put_chronon(iv.end());
    }

    pub fn put_entity(&mut self, e: EntityId) {
        let (kind, id) = e.parts();
        self.put_u8(kind);
        self.put_u64(id);
    }

    pub fn put_value(&mut self, v: &Value) {
        self.put_u8(v.value_type().tag());
        match v {
            Value::Int(i) => self.put_i64(*i),
            Value::Float(f) => self.put_u64(f.to_bits()),
            Value::Bool(b) => self.put_u8(u8::from(*b)),
            Value::Str(s) => self.put_str(s),
        }
    }

    pub fn put_opt_value(&mut self, v: Option<&Value>) {
        match v {
            Some(v) => self.put_value(v),
            None => self.put_u8(TOMBSTONE_TAG),
        }
    }

    /// Compact value encoding: varint integers, varint-length strings.
    pub fn put_opt_value_compact(&mut self, v: Option<&Value>) {
        match v {
            None => self.put_u8(TOMBSTONE_TAG),
            Some(v) => {
                self.put_u8(v.value_type().tag());
                match v {
                    Value::Int(i) => self.put_ivarint(*i),
                    Value::Float(f) => self.put_u64(f.to_bits()),
                    Value::Bool(b) => self.put_u8(u8::from(*b)),
                    Value::Str(s) => {
                        self.put_uvarint(s.len() as u64);
                        self.buf.extend_from_slice(s.as_bytes());
                    }
                }
            }
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String, DecodeError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| DecodeError::Utf8)
    }

    pub fn uvarint(&mut self) -> Result<u64, DecodeError> {
        let mut out = 0u64;
        let mut shift = 0;
        loop {
            let b = self.u8()?;
            if shift >= 64 {
                return Err(DecodeError::Truncated);
            }
            out |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(out);
            }
            shift += 7;
        }
    }

    pub fn ivarint(&mut self) -> Result<i64, DecodeError> {
        let u = self.uvarint()?;
        Ok(((u >> 1) as i64) ^ -((u & 1) as i64))
    }

    pub fn chronon(&mut self) -> Result<Chronon, DecodeError> {
        Ok(Chronon::from_raw(self.u64()?))
    }

    pub fn interval(&mut self) -> Result<TimeInterval, DecodeError> {
        let s = self.chronon()?;
        let e = self.chronon()?;
        TimeInterval::new(s, e).map_err(|_| DecodeError::Interval)
    }

    pub fn entity(&mut self) -> Result<EntityId, DecodeError> {
        let kind = self.u8()?;
        let id = self.u64()?;
        EntityId::from_parts(kind, id).ok_or(DecodeError::BadTag(kind))
    }

    fn value_body(&mut self, tag: u8) -> Result<Value, DecodeError> {
        Ok(match ValueType::from_tag(tag).ok_or(DecodeError::BadTag(tag))? {
            ValueType::Int => Value::Int(self.i64()?),
            ValueType::Float => Value::Float(f64::from_bits(self.u64()?)),
            ValueType::Bool => Value::Bool(self.u8()? != 0),
            ValueType::Str => Value::Str(self.str()?),
        })
    }

    pub fn value(&mut self) -> Result<Value, DecodeError> {
        let tag = self.u8()?;
        self.value_body(tag)
    }

    pub fn opt_value(&mut self) -> Result<Option<Value>, DecodeError> {
        let tag = self.u8()?;
        if tag == TOMBSTONE_TAG {
            return Ok(None);
        }
        self.value_body(tag).map(Some)
    }

    pub fn opt_value_compact(&mut self) -> Result<Option<Value>, DecodeError> {
        let tag = self.u8()?;
        if tag == TOMBSTONE_TAG {
            return Ok(None);
        }
        Ok(Some(match ValueType::from_tag(tag).ok_or(DecodeError::BadTag(tag))? {
            ValueType::Int => Value::Int(self.ivarint()?),
            ValueType::Float => Value::Float(f64::from_bits(self.u64()?)),
            ValueType::Bool => Value::Bool(self.u8()? != 0),
            ValueType::Str => {
                let n = self.uvarint()? as usize;
                let b = self.take(n)?;
                Value::Str(String::from_utf8(b.to_vec()).map_err(|_| DecodeError::Utf8)?)
            }
        }))
    }
}
