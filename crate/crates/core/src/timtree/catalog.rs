//! Metadata File and Buffer File encodings.
//!
//! Metadata File: `"PETGCAT1" | u32 version | u64 next_file_id | u32 n_props`
//! then per property its definition and chunk descriptors, then a crc32.
//!
//! Buffer File: `"PETGBUF1" | u32 version | u64 checkpoint | u64 raw_bytes |
//! u32 n_props` then per property the Global Memtable remainder and every
//! Local Memtable keyed by chunk range, then a crc32.

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::TimeInterval;
use crate::schema::{PropertyDef, PropertyId};

use super::memtable::{Memtable, Overlay};

const CAT_MAGIC: &[u8; 8] = b"PETGCAT1";
const BUF_MAGIC: &[u8; 8] = b"PETGBUF1";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkDesc {
    pub file_id: u64,
    pub level: u8,
    pub range: TimeInterval,
    pub item_count: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct CatalogImage {
    pub next_file_id: u64,
    pub properties: Vec<(PropertyDef, Vec<ChunkDesc>)>,
}

fn seal(mut w: Writer) -> Vec<u8> {
    let crc = crc32fast::hash(w.as_slice());
    w.put_u32(crc);
    w.into_inner()
}

fn unseal<'a>(bytes: &'a [u8], what: &'static str, magic: &[u8; 8]) -> Result<Reader<'a>> {
    if bytes.len() < 16 {
        return Err(Error::corrupt(what, "too short"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(Error::corrupt(what, "checksum mismatch"));
    }
    let mut r = Reader::new(body);
    if r.take(8)? != magic {
        return Err(Error::corrupt(what, "bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(Error::corrupt(what, "unsupported version"));
    }
    Ok(r)
}

impl CatalogImage {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_bytes(CAT_MAGIC);
        w.put_u32(VERSION);
        w.put_u64(self.next_file_id);
        w.put_u32(self.properties.len() as u32);
        for (def, chunks) in &self.properties {
            def.encode(&mut w);
            w.put_u32(chunks.len() as u32);
            for c in chunks {
                w.put_u64(c.file_id);
                w.put_u8(c.level);
                w.put_interval(c.range);
                w.put_u64(c.item_count);
                w.put_u64(c.bytes);
            }
        }
        seal(w)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = unseal(bytes, "metadata file", CAT_MAGIC)?;
        let next_file_id = r.u64()?;
        let n = r.u32()?;
        let mut properties = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let def = PropertyDef::decode(&mut r)?;
            let m = r.u32()?;
            let mut chunks = Vec::with_capacity(m as usize);
            for _ in 0..m {
                chunks.push(ChunkDesc {
                    file_id: r.u64()?,
                    level: r.u8()?,
                    range: r.interval()?,
                    item_count: r.u64()?,
                    bytes: r.u64()?,
                });
            }
            properties.push((def, chunks));
        }
        Ok(CatalogImage {
            next_file_id,
            properties,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct BufferImage {
    pub checkpoint: u64,
    pub raw_bytes: u64,
    pub properties: Vec<PropertyBuffers>,
}

#[derive(Clone, Debug)]
pub(crate) struct PropertyBuffers {
    pub property: PropertyId,
    pub global: Memtable,
    pub locals: Vec<(TimeInterval, Memtable)>,
}

fn put_memtable(w: &mut Writer, m: &Memtable) {
    let n = m.iter().count();
    w.put_u32(n as u32);
    for (e, s) in m.iter() {
        w.put_entity(*e);
        w.put_u32(s.len() as u32);
        for (iv, v) in s.entries() {
            w.put_interval(*iv);
            w.put_opt_value(v.as_ref());
        }
    }
}

fn get_memtable(r: &mut Reader<'_>) -> Result<Memtable> {
    let mut m = Memtable::new();
    for _ in 0..r.u32()? {
        let e = r.entity()?;
        let mut entries = Vec::new();
        for _ in 0..r.u32()? {
            let iv = r.interval()?;
            entries.push((iv, r.opt_value()?));
        }
        let s = Overlay::coalesce(entries).map_err(|err| Error::corrupt("buffer file", err))?;
        m.write_series(e, &s);
    }
    Ok(m)
}

impl BufferImage {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_bytes(BUF_MAGIC);
        w.put_u32(VERSION);
        w.put_u64(self.checkpoint);
        w.put_u64(self.raw_bytes);
        w.put_u32(self.properties.len() as u32);
        for p in &self.properties {
            w.put_u32(p.property.0);
            put_memtable(&mut w, &p.global);
            w.put_u32(p.locals.len() as u32);
            for (range, m) in &p.locals {
                w.put_interval(*range);
                put_memtable(&mut w, m);
            }
        }
        seal(w)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = unseal(bytes, "buffer file", BUF_MAGIC)?;
        let checkpoint = r.u64()?;
        let raw_bytes = r.u64()?;
        let mut properties = Vec::new();
        for _ in 0..r.u32()? {
            let property = PropertyId(r.u32()?);
            let global = get_memtable(&mut r)?;
            let mut locals = Vec::new();
            for _ in 0..r.u32()? {
                let range = r.interval()?;
                locals.push((range, get_memtable(&mut r)?));
            }
            properties.push(PropertyBuffers {
                property,
                global,
                locals,
            });
        }
        Ok(BufferImage {
            checkpoint,
            raw_bytes,
            properties,
        })
    }
}
