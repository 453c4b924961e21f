//! On-disk Time Span Chunk.
//!
//! ```text
//! data blocks   u32 item_count | u8 codec | u32 payload_len | payload | u32 crc
//! index blocks  up to K fixed 32 B entries | u32 crc
//!               entry: u8 kind | 3 B pad | u32 block_len | u64 id | u64 tau_s | u64 block_off
//! footer (64 B) magic "PETGCHK1" | u32 version | u32 property | u64 start | u64 end
//!               | u64 item_count | u64 index_offset | u64 block_count
//!               | u8 level | u8 codec | u16 K | u32 crc
//! ```
//!
//! Items are sorted by `(entity, tau_s)`; an item's end is the next item's
//! start for the same entity, or the chunk end. Codec 0 stores items as
//! fixed-width `<e, tp, tau_s, v>` records; codec 1 delta-encodes ids and
//! start times with varints and runs the block through Snappy.
//!
//! The index is searched by binary search over index blocks so lookups read
//! `O(log blocks)` index blocks plus the data blocks holding the answer.

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::graph::EntityId;
use crate::model::{Chronon, TimeInterval, Value};
use crate::schema::PropertyId;

use super::memtable::Overlay;

const MAGIC: &[u8; 8] = b"PETGCHK1";
const VERSION: u32 = 1;
const FOOTER_BYTES: usize = 64;
const INDEX_ENTRY_BYTES: usize = 32;
const BLOCK_HEADER_BYTES: usize = 9;

const CODEC_RAW: u8 = 0;
const CODEC_COMPACT: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Item {
    pub entity: EntityId,
    pub start: Chronon,
    pub value: Option<Value>,
}

impl Item {
    fn key(&self) -> (EntityId, Chronon) {
        (self.entity, self.start)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct IndexEntry {
    entity: EntityId,
    start: Chronon,
    block_off: u64,
    block_len: u32,
}

impl IndexEntry {
    fn key(&self) -> (EntityId, Chronon) {
        (self.entity, self.start)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Footer {
    pub property: PropertyId,
    pub range: TimeInterval,
    pub item_count: u64,
    pub level: u8,
    index_offset: u64,
    block_count: u64,
    codec: u8,
    per_index_block: u16,
}

pub(crate) struct ChunkWriter {
    property: PropertyId,
    range: TimeInterval,
    level: u8,
    compressed: bool,
    block_payload: usize,
    out: Writer,
    pending: Vec<Item>,
    pending_raw: usize,
    index: Vec<IndexEntry>,
    item_count: u64,
    last_key: Option<(EntityId, Chronon)>,
    per_index_block: usize,
}

fn raw_item_len(v: &Option<Value>) -> usize {
    let value = match v {
        None => 1,
        Some(Value::Bool(_)) => 2,
        Some(Value::Str(s)) => 5 + s.len(),
        Some(_) => 9,
    };
    1 + 8 + 4 + 8 + value
}

impl ChunkWriter {
    pub fn new(
        property: PropertyId,
        range: TimeInterval,
        level: u8,
        compressed: bool,
        block_bytes: usize,
    ) -> Self {
        let block_bytes = block_bytes.max(128);
        ChunkWriter {
            property,
            range,
            level,
            compressed,
            block_payload: block_bytes - BLOCK_HEADER_BYTES - 4,
            out: Writer::new(),
            pending: Vec::new(),
            pending_raw: 0,
            index: Vec::new(),
            item_count: 0,
            last_key: None,
            per_index_block: (block_bytes - 4) / INDEX_ENTRY_BYTES,
        }
    }

    pub fn push(&mut self, item: Item) {
        debug_assert!(self.range.contains(item.start), "item outside chunk range");
        if let Some(last) = self.last_key {
            assert!(last < item.key(), "chunk items must be strictly ascending");
        }
        self.last_key = Some(item.key());
        let len = raw_item_len(&item.value);
        if !self.pending.is_empty() && self.pending_raw + len > self.block_payload {
            self.close_block();
        }
        self.pending_raw += len;
        self.pending.push(item);
        self.item_count += 1;
    }

    /// Writes one entity's series, which must be coalesced and lie inside the
    /// chunk range. Gaps become tombstone items.
    pub fn push_series<'a>(
        &mut self,
        entity: EntityId,
        entries: impl IntoIterator<Item = (TimeInterval, &'a Value)>,
    ) {
        let mut open_end: Option<Chronon> = None;
        for (iv, v) in entries {
            if let Some(end) = open_end {
                if end < iv.start() {
                    self.push(Item {
                        entity,
                        start: end,
                        value: None,
                    });
                }
            }
            self.push(Item {
                entity,
                start: iv.start(),
                value: Some(v.clone()),
            });
            open_end = Some(iv.end());
        }
        if let Some(end) = open_end {
            if end < self.range.end() {
                self.push(Item {
                    entity,
                    start: end,
                    value: None,
                });
            }
        }
    }

    fn close_block(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let items = std::mem::take(&mut self.pending);
        self.pending_raw = 0;
        let (codec, payload) = if self.compressed {
            let plain = encode_compact(&items, self.range.start());
            let packed = snap::raw::Encoder::new()
                .compress_vec(&plain)
                .expect("snappy compression of an in-memory buffer");
            (CODEC_COMPACT, packed)
        } else {
            (CODEC_RAW, encode_raw(&items, self.property))
        };
        let off = self.out.len();
        let mut block = Writer::with_capacity(payload.len() + BLOCK_HEADER_BYTES + 4);
        block.put_u32(items.len() as u32);
        block.put_u8(codec);
        block.put_u32(payload.len() as u32);
        block.put_bytes(&payload);
        let crc = crc32fast::hash(block.as_slice());
        block.put_u32(crc);
        self.out.put_bytes(block.as_slice());
        self.index.push(IndexEntry {
            entity: items[0].entity,
            start: items[0].start,
            block_off: off as u64,
            block_len: block.len() as u32,
        });
    }

    pub fn item_count(&self) -> u64 {
        self.item_count
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.close_block();
        let index_offset = self.out.len() as u64;
        for chunk in self.index.chunks(self.per_index_block) {
            let mut ib = Writer::with_capacity(chunk.len() * INDEX_ENTRY_BYTES + 4);
            for ie in chunk {
                let (kind, id) = ie.entity.parts();
                ib.put_u8(kind);
                ib.put_bytes(&[0; 3]);
                ib.put_u32(ie.block_len);
                ib.put_u64(id);
                ib.put_chronon(ie.start);
                ib.put_u64(ie.block_off);
            }
            let crc = crc32fast::hash(ib.as_slice());
            ib.put_u32(crc);
            self.out.put_bytes(ib.as_slice());
        }
        let mut f = Writer::with_capacity(FOOTER_BYTES);
        f.put_bytes(MAGIC);
        f.put_u32(VERSION);
        f.put_u32(self.property.0);
        f.put_chronon(self.range.start());
        f.put_chronon(self.range.end());
        f.put_u64(self.item_count);
        f.put_u64(index_offset);
        f.put_u64(self.index.len() as u64);
        f.put_u8(self.level);
        f.put_u8(if self.compressed { CODEC_COMPACT } else { CODEC_RAW });
        f.put_bytes(&(self.per_index_block as u16).to_le_bytes());
        let crc = crc32fast::hash(f.as_slice());
        f.put_u32(crc);
        self.out.put_bytes(f.as_slice());
        self.out.into_inner()
    }
}

fn encode_raw(items: &[Item], property: PropertyId) -> Vec<u8> {
    let mut w = Writer::new();
    for it in items {
        w.put_entity(it.entity);
        w.put_u32(property.0);
        w.put_chronon(it.start);
        w.put_opt_value(it.value.as_ref());
    }
    w.into_inner()
}

fn encode_compact(items: &[Item], base: Chronon) -> Vec<u8> {
    let mut w = Writer::new();
    let mut prev: Option<&Item> = None;
    for it in items {
        let (kind, id) = it.entity.parts();
        w.put_u8(kind);
        match prev.map(|p| p.entity.parts()) {
            Some((pk, pid)) if pk == kind => w.put_ivarint(id.wrapping_sub(pid) as i64),
            _ => w.put_uvarint(id),
        }
        match prev {
            Some(p) if p.entity == it.entity => w.put_uvarint(it.start.tick() - p.start.tick()),
            _ => w.put_uvarint(it.start.tick() - base.tick()),
        }
        w.put_opt_value_compact(it.value.as_ref());
        prev = Some(it);
    }
    w.into_inner()
}

fn decode_block(bytes: &[u8], base: Chronon) -> Result<Vec<Item>> {
    if bytes.len() < BLOCK_HEADER_BYTES + 4 {
        return Err(Error::corrupt("chunk block", "short block"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(Error::corrupt("chunk block", "checksum mismatch"));
    }
    let mut r = Reader::new(body);
    let n = r.u32()? as usize;
    let codec = r.u8()?;
    let len = r.u32()? as usize;
    let payload = r.take(len)?;
    let mut items = Vec::with_capacity(n);
    match codec {
        CODEC_RAW => {
            let mut r = Reader::new(payload);
            for _ in 0..n {
                let entity = r.entity()?;
                r.u32()?;
                let start = r.chronon()?;
                let value = r.opt_value()?;
                items.push(Item {
                    entity,
                    start,
                    value,
                });
            }
        }
        CODEC_COMPACT => {
            let plain = snap::raw::Decoder::new()
                .decompress_vec(payload)
                .map_err(|e| Error::corrupt("chunk block", e))?;
            let mut r = Reader::new(&plain);
            let mut prev: Option<(EntityId, Chronon)> = None;
            for _ in 0..n {
                let kind = r.u8()?;
                let id = match prev.map(|(e, _)| e.parts()) {
                    Some((pk, pid)) if pk == kind => pid.wrapping_add(r.ivarint()? as u64),
                    _ => r.uvarint()?,
                };
                let entity = EntityId::from_parts(kind, id)
                    .ok_or_else(|| Error::corrupt("chunk block", "bad entity kind"))?;
                let delta = r.uvarint()?;
                let start = match prev {
                    Some((pe, ps)) if pe == entity => Chronon::from_raw(ps.tick() + delta),
                    _ => Chronon::from_raw(base.tick() + delta),
                };
                let value = r.opt_value_compact()?;
                prev = Some((entity, start));
                items.push(Item {
                    entity,
                    start,
                    value,
                });
            }
        }
        other => return Err(Error::corrupt("chunk block", format!("unknown codec {other}"))),
    }
    Ok(items)
}

fn decode_footer(bytes: &[u8]) -> Result<Footer> {
    let bad = |d: &str| Error::corrupt("chunk footer", d);
    let (body, crc) = bytes.split_at(FOOTER_BYTES - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader::new(body);
    if r.take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(bad("unsupported version"));
    }
    let property = PropertyId(r.u32()?);
    let range = r.interval()?;
    let item_count = r.u64()?;
    let index_offset = r.u64()?;
    let block_count = r.u64()?;
    let level = r.u8()?;
    let codec = r.u8()?;
    let per_index_block = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if per_index_block == 0 {
        return Err(bad("zero index fan-out"));
    }
    Ok(Footer {
        property,
        range,
        item_count,
        level,
        index_offset,
        block_count,
        codec,
        per_index_block,
    })
}

/// An open, immutable chunk file. Reads go through positional I/O, so the
/// handle stays valid after the file is unlinked by a merge.
pub(crate) struct ChunkFile {
    path: PathBuf,
    file: File,
    size: u64,
    footer: Footer,
    reads: Arc<AtomicU64>,
}

impl std::fmt::Debug for ChunkFile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChunkFile")
            .field("path", &self.path)
            .field("size", &self.size)
            .field("footer", &self.footer)
            .finish()
    }
}

impl ChunkFile {
    pub fn open(path: &Path, reads: Arc<AtomicU64>) -> Result<Self> {
        let file = File::open(path)?;
        let size = file.metadata()?.len();
        if (size as usize) < FOOTER_BYTES {
            return Err(Error::corrupt("chunk file", format!("{} is too short", path.display())));
        }
        let mut buf = [0u8; FOOTER_BYTES];
        file.read_exact_at(&mut buf, size - FOOTER_BYTES as u64)?;
        let footer = decode_footer(&buf)?;
        Ok(ChunkFile {
            path: path.to_path_buf(),
            file,
            size,
            footer,
            reads,
        })
    }

    pub fn footer(&self) -> &Footer {
        &self.footer
    }

    #[cfg(test)]
    pub fn path(&self) -> &Path {
        &self.path
    }

    #[cfg(test)]
    pub fn size(&self) -> u64 {
        self.size
    }

    fn read_at(&self, off: u64, len: usize) -> Result<Vec<u8>> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        let mut buf = vec![0u8; len];
        self.file.read_exact_at(&mut buf, off)?;
        Ok(buf)
    }

    fn index_blocks(&self) -> u64 {
        let k = u64::from(self.footer.per_index_block);
        self.footer.block_count.div_ceil(k)
    }

    fn read_index_block(&self, i: u64) -> Result<Vec<IndexEntry>> {
        let k = u64::from(self.footer.per_index_block);
        let first = i * k;
        let n = (self.footer.block_count - first).min(k) as usize;
        let stride = k as usize * INDEX_ENTRY_BYTES + 4;
        let off = self.footer.index_offset + i * stride as u64;
        let bytes = self.read_at(off, n * INDEX_ENTRY_BYTES + 4)?;
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(Error::corrupt("chunk index", "checksum mismatch"));
        }
        let mut r = Reader::new(body);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let kind = r.u8()?;
            r.take(3)?;
            let block_len = r.u32()?;
            let id = r.u64()?;
            let start = r.chronon()?;
            let block_off = r.u64()?;
            let entity = EntityId::from_parts(kind, id)
                .ok_or_else(|| Error::corrupt("chunk index", "bad entity kind"))?;
            out.push(IndexEntry {
                entity,
                start,
                block_off,
                block_len,
            });
        }
        Ok(out)
    }

    fn read_block(&self, ie: &IndexEntry) -> Result<Vec<Item>> {
        let bytes = self.read_at(ie.block_off, ie.block_len as usize)?;
        decode_block(&bytes, self.footer.range.start())
    }

    /// Position (block number, entry) of the last data block whose first key
    /// is `<= key`, or block 0.
    fn locate(&self, key: (EntityId, Chronon)) -> Result<Option<(u64, IndexEntry)>> {
        let nb = self.index_blocks();
        if nb == 0 {
            return Ok(None);
        }
        let k = u64::from(self.footer.per_index_block);
        let (mut lo, mut hi) = (0u64, nb);
        let mut best: Option<(u64, Vec<IndexEntry>)> = None;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let entries = self.read_index_block(mid)?;
            if entries[0].key() <= key {
                let done = entries.last().unwrap().key() >= key;
                best = Some((mid, entries));
                if done {
                    break;
                }
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let (ib, entries) = match best {
            Some(b) => b,
            None => (0, self.read_index_block(0)?),
        };
        let pos = entries.partition_point(|e| e.key() <= key).saturating_sub(1);
        Ok(Some((ib * k + pos as u64, entries[pos])))
    }

    fn entry_at(&self, block: u64) -> Result<IndexEntry> {
        let k = u64::from(self.footer.per_index_block);
        let entries = self.read_index_block(block / k)?;
        Ok(entries[(block % k) as usize])
    }

    /// The entity's series inside `iv` (clipped), with tombstones kept as
    /// `None` entries.
    pub fn lookup(&self, entity: EntityId, iv: TimeInterval) -> Result<Vec<(TimeInterval, Option<Value>)>> {
        let Some(window) = iv.intersect(&self.footer.range) else {
            return Ok(Vec::new());
        };
        let Some((mut block_no, mut ie)) = self.locate((entity, window.start()))? else {
            return Ok(Vec::new());
        };
        let mut items = self.read_block(&ie)?;
        let mut pos = items
            .partition_point(|it| it.key() <= (entity, window.start()))
            .saturating_sub(1);
        let mut out = Vec::new();
        let mut current: Option<(Chronon, Option<Value>)> = None;
        loop {
            if pos == items.len() {
                block_no += 1;
                if block_no >= self.footer.block_count {
                    break;
                }
                ie = self.entry_at(block_no)?;
                items = self.read_block(&ie)?;
                pos = 0;
            }
            let it = &items[pos];
            if it.entity != entity {
                if it.entity > entity {
                    break;
                }
                pos += 1;
                continue;
            }
            if let Some((s, v)) = current.take() {
                push_clipped(&mut out, s, it.start, v, window);
            }
            if it.start >= window.end() {
                break;
            }
            current = Some((it.start, it.value.clone()));
            pos += 1;
        }
        if let Some((s, v)) = current {
            push_clipped(&mut out, s, self.footer.range.end(), v, window);
        }
        Ok(out)
    }

    /// Every item of the file in key order.
    pub fn items(&self) -> Result<Vec<Item>> {
        let mut out = Vec::with_capacity(self.footer.item_count as usize);
        if self.footer.index_offset == 0 {
            return Ok(out);
        }
        let data = self.read_at(0, self.footer.index_offset as usize)?;
        let mut off = 0usize;
        while off < data.len() {
            let len = u32::from_le_bytes(data[off + 5..off + 9].try_into().unwrap()) as usize;
            let end = off + BLOCK_HEADER_BYTES + len + 4;
            if end > data.len() {
                return Err(Error::corrupt("chunk file", "block overruns data region"));
            }
            out.extend(decode_block(&data[off..end], self.footer.range.start())?);
            off = end;
        }
        Ok(out)
    }

    /// Per-entity overlay series for the whole file, ascending by entity.
    pub fn entity_series(&self) -> Result<Vec<(EntityId, Overlay)>> {
        let items = self.items()?;
        let end = self.footer.range.end();
        let mut out: Vec<(EntityId, Overlay)> = Vec::new();
        for (i, it) in items.iter().enumerate() {
            let next = items
                .get(i + 1)
                .filter(|n| n.entity == it.entity)
                .map_or(end, |n| n.start);
            if out.last().map(|(e, _)| *e) != Some(it.entity) {
                out.push((it.entity, Overlay::new()));
            }
            let iv = TimeInterval::new(it.start, next)
                .map_err(|_| Error::corrupt("chunk file", "items out of order"))?;
            out.last_mut().unwrap().1.push_back(iv, it.value.clone());
        }
        Ok(out)
    }

    #[cfg(test)]
    pub fn is_compressed(&self) -> bool {
        self.footer.codec == CODEC_COMPACT
    }
}

fn push_clipped(
    out: &mut Vec<(TimeInterval, Option<Value>)>,
    start: Chronon,
    end: Chronon,
    v: Option<Value>,
    window: TimeInterval,
) {
    if let Ok(iv) = TimeInterval::new(start, end) {
        if let Some(x) = iv.intersect(&window) {
            out.push((x, v));
        }
    }
}
