//! Snapshot file for the graph store.
//!
//! Layout (little-endian):
//!
//! ```text
//! header   64 B   magic "PETGREC1", version u32, reserved u32,
//!                 node_count u64, edge_count u64, next_vid u64, next_eid u64,
//!                 heap_offset u64, heap_len u64
//! nodes    24 B   vid u64, heap_off u64, heap_len u32, reserved u32
//! edges    40 B   eid u64, src u64, dst u64, heap_off u64, heap_len u32, reserved u32
//! heap            attribute blobs referenced by the fixed-width records
//! trailer   4 B   crc32 of everything before it
//! ```
//!
//! Each attribute blob holds the label set, the non-temporal property map and
//! the temporal-property name to id map.

use std::collections::BTreeSet;
use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::io::IoGate;
use crate::schema::PropertyId;

use super::{Attributes, EntityId, GraphStore};

const MAGIC: &[u8; 8] = b"PETGREC1";
const VERSION: u32 = 1;
const HEADER_BYTES: usize = 64;
const NODE_BYTES: usize = 24;
const EDGE_BYTES: usize = 40;

fn encode_attrs(a: &Attributes, w: &mut Writer) {
    w.put_u32(a.labels.len() as u32);
    for l in &a.labels {
        w.put_str(l);
    }
    w.put_u32(a.props.len() as u32);
    for (k, v) in &a.props {
        w.put_str(k);
        w.put_value(v);
    }
    w.put_u32(a.tprops.len() as u32);
    for (k, pid) in &a.tprops {
        w.put_str(k);
        w.put_u32(pid.0);
    }
}

fn decode_attrs(r: &mut Reader<'_>) -> Result<Attributes> {
    let mut a = Attributes::default();
    for _ in 0..r.u32()? {
        a.labels.insert(r.str()?);
    }
    for _ in 0..r.u32()? {
        let k = r.str()?;
        a.props.insert(k, r.value()?);
    }
    for _ in 0..r.u32()? {
        let k = r.str()?;
        a.tprops.insert(k, PropertyId(r.u32()?));
    }
    Ok(a)
}

pub(crate) fn encode(g: &GraphStore) -> Vec<u8> {
    let mut heap = Writer::new();
    let mut node_recs = Writer::with_capacity(g.node_count() * NODE_BYTES);
    for n in g.nodes() {
        let off = heap.len();
        encode_attrs(&n.attrs, &mut heap);
        node_recs.put_u64(n.vid);
        node_recs.put_u64(off as u64);
        node_recs.put_u32((heap.len() - off) as u32);
        node_recs.put_u32(0);
    }
    let mut edge_recs = Writer::with_capacity(g.edge_count() * EDGE_BYTES);
    for e in g.edges() {
        let off = heap.len();
        encode_attrs(&e.attrs, &mut heap);
        edge_recs.put_u64(e.eid);
        edge_recs.put_u64(e.src);
        edge_recs.put_u64(e.dst);
        edge_recs.put_u64(off as u64);
        edge_recs.put_u32((heap.len() - off) as u32);
        edge_recs.put_u32(0);
    }
    let heap_offset = HEADER_BYTES + node_recs.len() + edge_recs.len();
    let (next_vid, next_eid) = g.next_ids();
    let mut w = Writer::with_capacity(heap_offset + heap.len() + 4);
    w.put_bytes(MAGIC);
    w.put_u32(VERSION);
    w.put_u32(0);
    w.put_u64(g.node_count() as u64);
    w.put_u64(g.edge_count() as u64);
    w.put_u64(next_vid);
    w.put_u64(next_eid);
    w.put_u64(heap_offset as u64);
    w.put_u64(heap.len() as u64);
    debug_assert_eq!(w.len(), HEADER_BYTES);
    w.put_bytes(node_recs.as_slice());
    w.put_bytes(edge_recs.as_slice());
    w.put_bytes(heap.as_slice());
    let crc = crc32fast::hash(w.as_slice());
    w.put_u32(crc);
    w.into_inner()
}

pub(crate) fn decode(bytes: &[u8]) -> Result<GraphStore> {
    let bad = |d: &str| Error::corrupt("record file", d);
    if bytes.len() < HEADER_BYTES + 4 {
        return Err(bad("too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader::new(body);
    if r.take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    r.u32()?;
    let node_count = r.u64()? as usize;
    let edge_count = r.u64()? as usize;
    let next_vid = r.u64()?;
    let next_eid = r.u64()?;
    let heap_offset = r.u64()? as usize;
    let heap_len = r.u64()? as usize;
    if heap_offset != HEADER_BYTES + node_count * NODE_BYTES + edge_count * EDGE_BYTES
        || heap_offset + heap_len != body.len()
    {
        return Err(bad("inconsistent section sizes"));
    }
    let heap = &body[heap_offset..];
    let blob = |off: u64, len: u32| -> Result<Attributes> {
        let (off, len) = (off as usize, len as usize);
        let slice = heap.get(off..off + len).ok_or_else(|| bad("heap reference out of range"))?;
        decode_attrs(&mut Reader::new(slice))
    };

    let mut g = GraphStore::new();
    for _ in 0..node_count {
        let vid = r.u64()?;
        let off = r.u64()?;
        let len = r.u32()?;
        r.u32()?;
        let attrs = blob(off, len)?;
        restore(&mut g, EntityId::Node(vid), attrs, None)?;
    }
    for _ in 0..edge_count {
        let eid = r.u64()?;
        let src = r.u64()?;
        let dst = r.u64()?;
        let off = r.u64()?;
        let len = r.u32()?;
        r.u32()?;
        let attrs = blob(off, len)?;
        restore(&mut g, EntityId::Edge(eid), attrs, Some((src, dst)))?;
    }
    g.bump_next_ids(next_vid, next_eid);
    Ok(g)
}

fn restore(
    g: &mut GraphStore,
    e: EntityId,
    attrs: Attributes,
    ends: Option<(u64, u64)>,
) -> Result<()> {
    let labels: BTreeSet<String> = attrs.labels;
    match (e, ends) {
        (EntityId::Node(vid), _) => g.insert_node(vid, labels),
        (EntityId::Edge(eid), Some((src, dst))) => g.insert_edge(eid, src, dst, labels)?,
        (EntityId::Edge(_), None) => unreachable!(),
    }
    for (k, v) in attrs.props {
        g.set_prop(e, &k, v)?;
    }
    for (k, pid) in attrs.tprops {
        g.attach_tprop(e, &k, pid)?;
    }
    Ok(())
}

pub(crate) fn write(gate: &IoGate, path: &Path, g: &GraphStore) -> Result<()> {
    gate.write_atomic(path, &encode(g))
}

pub(crate) fn read(path: &Path) -> Result<GraphStore> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Value;

    fn sample() -> GraphStore {
        let mut g = GraphStore::new();
        g.insert_node(1, ["Intersection".to_string()].into());
        g.insert_node(2, ["Intersection".to_string()].into());
        g.insert_edge(1, 1, 2, ["Road".to_string()].into()).unwrap();
        g.set_prop(EntityId::Edge(1), "name", Value::from("Haidian East Road"))
            .unwrap();
        g.set_prop(EntityId::Node(2), "lanes", Value::Int(4)).unwrap();
        g.attach_tprop(EntityId::Edge(1), "travel_time", PropertyId(3))
            .unwrap();
        g.bump_next_ids(10, 20);
        g
    }

    #[test]
    fn snapshot_roundtrip() {
        let g = sample();
        let back = decode(&encode(&g)).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.next_ids(), (10, 20));
        assert_eq!(back.entities_with(PropertyId(3)), vec![EntityId::Edge(1)]);
    }

    #[test]
    fn header_and_fixed_records() {
        let g = sample();
        let bytes = encode(&g);
        assert_eq!(&bytes[..8], MAGIC);
        let heap_offset = u64::from_le_bytes(bytes[48..56].try_into().unwrap()) as usize;
        assert_eq!(heap_offset, HEADER_BYTES + 2 * NODE_BYTES + EDGE_BYTES);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&sample());
        bytes[70] ^= 0xff;
        assert!(matches!(decode(&bytes), Err(Error::Corrupt { .. })));
        assert!(decode(&bytes[..10]).is_err());
    }
}
