//! Topology and non-temporal property storage.
//!
//! The store is an in-memory adjacency structure. Durability comes from the
//! WAL plus a full snapshot in the record file written at every checkpoint
//! (see [`record_file`]).

pub mod record_file;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::model::Value;
use crate::schema::PropertyId;

/// A node or edge id, tagged with its kind.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityId {
    Node(u64),
    Edge(u64),
}

impl EntityId {
    pub(crate) fn parts(self) -> (u8, u64) {
        match self {
            EntityId::Node(id) => (0, id),
            EntityId::Edge(id) => (1, id),
        }
    }

    pub(crate) fn from_parts(kind: u8, id: u64) -> Option<Self> {
        match kind {
            0 => Some(EntityId::Node(id)),
            1 => Some(EntityId::Edge(id)),
            _ => None,
        }
    }

    pub fn id(self) -> u64 {
        self.parts().1
    }

    pub fn is_node(self) -> bool {
        matches!(self, EntityId::Node(_))
    }
}

impl fmt::Debug for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityId::Node(id) => write!(f, "node:{id}"),
            EntityId::Edge(id) => write!(f, "edge:{id}"),
        }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Outgoing,
    Incoming,
    Both,
}

/// Labels, non-temporal properties and temporal-property handles carried by
/// an entity. Property and temporal-property names share one namespace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Attributes {
    pub labels: BTreeSet<String>,
    pub props: BTreeMap<String, Value>,
    pub tprops: BTreeMap<String, PropertyId>,
}

impl Attributes {
    pub fn with_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Attributes {
            labels: labels.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn has_labels(&self, wanted: &[String]) -> bool {
        wanted.iter().all(|l| self.labels.contains(l))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeRecord {
    pub vid: u64,
    pub attrs: Attributes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRecord {
    pub eid: u64,
    pub src: u64,
    pub dst: u64,
    pub attrs: Attributes,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphStore {
    nodes: BTreeMap<u64, NodeRecord>,
    edges: BTreeMap<u64, EdgeRecord>,
    out_adj: HashMap<u64, BTreeSet<u64>>,
    in_adj: HashMap<u64, BTreeSet<u64>>,
    label_index: HashMap<String, BTreeSet<u64>>,
    tprop_index: HashMap<PropertyId, BTreeSet<EntityId>>,
    next_vid: u64,
    next_eid: u64,
}

impl GraphStore {
    pub fn new() -> Self {
        GraphStore {
            next_vid: 1,
            next_eid: 1,
            ..Default::default()
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// First id never handed out by this store.
    pub fn next_ids(&self) -> (u64, u64) {
        (self.next_vid, self.next_eid)
    }

    pub(crate) fn bump_next_ids(&mut self, vid: u64, eid: u64) {
        self.next_vid = self.next_vid.max(vid);
        self.next_eid = self.next_eid.max(eid);
    }

    pub fn node(&self, vid: u64) -> Option<&NodeRecord> {
        self.nodes.get(&vid)
    }

    pub fn edge(&self, eid: u64) -> Option<&EdgeRecord> {
        self.edges.get(&eid)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &EdgeRecord> {
        self.edges.values()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        match e {
            EntityId::Node(v) => self.nodes.contains_key(&v),
            EntityId::Edge(r) => self.edges.contains_key(&r),
        }
    }

    pub fn attrs(&self, e: EntityId) -> Option<&Attributes> {
        match e {
            EntityId::Node(v) => self.nodes.get(&v).map(|n| &n.attrs),
            EntityId::Edge(r) => self.edges.get(&r).map(|x| &x.attrs),
        }
    }

    fn attrs_mut(&mut self, e: EntityId) -> Result<&mut Attributes> {
        match e {
            EntityId::Node(v) => self
                .nodes
                .get_mut(&v)
                .map(|n| &mut n.attrs)
                .ok_or(Error::UnknownNode(v)),
            EntityId::Edge(r) => self
                .edges
                .get_mut(&r)
                .map(|x| &mut x.attrs)
                .ok_or(Error::UnknownEdge(r)),
        }
    }

    pub(crate) fn insert_node(&mut self, vid: u64, labels: BTreeSet<String>) {
        for l in &labels {
            self.label_index.entry(l.clone()).or_default().insert(vid);
        }
        self.nodes.insert(
            vid,
            NodeRecord {
                vid,
                attrs: Attributes {
                    labels,
                    ..Default::default()
                },
            },
        );
        self.next_vid = self.next_vid.max(vid + 1);
    }

    pub(crate) fn insert_edge(
        &mut self,
        eid: u64,
        src: u64,
        dst: u64,
        labels: BTreeSet<String>,
    ) -> Result<()> {
        for v in [src, dst] {
            if !self.nodes.contains_key(&v) {
                return Err(Error::UnknownNode(v));
            }
        }
        self.out_adj.entry(src).or_default().insert(eid);
        self.in_adj.entry(dst).or_default().insert(eid);
        self.edges.insert(
            eid,
            EdgeRecord {
                eid,
                src,
                dst,
                attrs: Attributes {
                    labels,
                    ..Default::default()
                },
            },
        );
        self.next_eid = self.next_eid.max(eid + 1);
        Ok(())
    }

    /// Ids of nodes whose labels are a superset of `labels`.
    pub fn get_node(&self, labels: &[String]) -> Vec<u64> {
        let Some(first) = labels.first() else {
            return self.nodes.keys().copied().collect();
        };
        let Some(candidates) = labels
            .iter()
            .map(|l| self.label_index.get(l))
            .try_fold(self.label_index.get(first), |best, set| match (best, set) {
                (Some(b), Some(s)) => Some(Some(if s.len() < b.len() { s } else { b })),
                _ => None,
            })
            .flatten()
        else {
            return Vec::new();
        };
        candidates
            .iter()
            .copied()
            .filter(|v| self.nodes[v].attrs.has_labels(labels))
            .collect()
    }

    /// Incident edges of `vid` in the given direction whose labels are a
    /// superset of `labels`. A self-loop is reported once.
    pub fn get_rel(&self, vid: u64, dir: Direction, labels: &[String]) -> Result<Vec<u64>> {
        if !self.nodes.contains_key(&vid) {
            return Err(Error::UnknownNode(vid));
        }
        let empty = BTreeSet::new();
        let out = self.out_adj.get(&vid).unwrap_or(&empty);
        let inc = self.in_adj.get(&vid).unwrap_or(&empty);
        let ids: BTreeSet<u64> = match dir {
            Direction::Outgoing => out.clone(),
            Direction::Incoming => inc.clone(),
            Direction::Both => out.union(inc).copied().collect(),
        };
        Ok(ids
            .into_iter()
            .filter(|e| self.edges[e].attrs.has_labels(labels))
            .collect())
    }

    /// Edges from `src` to `dst` whose labels are a superset of `labels`.
    pub fn edges_between(&self, src: u64, dst: u64, labels: &[String]) -> Vec<u64> {
        self.out_adj
            .get(&src)
            .into_iter()
            .flatten()
            .copied()
            .filter(|e| {
                let r = &self.edges[e];
                r.dst == dst && r.attrs.has_labels(labels)
            })
            .collect()
    }

    pub(crate) fn remove_edge(&mut self, eid: u64) -> Result<EdgeRecord> {
        let rec = self.edges.remove(&eid).ok_or(Error::UnknownEdge(eid))?;
        if let Some(s) = self.out_adj.get_mut(&rec.src) {
            s.remove(&eid);
        }
        if let Some(s) = self.in_adj.get_mut(&rec.dst) {
            s.remove(&eid);
        }
        for pid in rec.attrs.tprops.values() {
            self.unindex_tprop(*pid, EntityId::Edge(eid));
        }
        Ok(rec)
    }

    /// Removes a node with every incident edge; returns the removed edges.
    pub(crate) fn remove_node(&mut self, vid: u64) -> Result<(NodeRecord, Vec<EdgeRecord>)> {
        let incident = self.get_rel(vid, Direction::Both, &[])?;
        let mut removed = Vec::with_capacity(incident.len());
        for eid in incident {
            removed.push(self.remove_edge(eid)?);
        }
        let rec = self.nodes.remove(&vid).ok_or(Error::UnknownNode(vid))?;
        for l in &rec.attrs.labels {
            if let Some(s) = self.label_index.get_mut(l) {
                s.remove(&vid);
            }
        }
        for pid in rec.attrs.tprops.values() {
            self.unindex_tprop(*pid, EntityId::Node(vid));
        }
        self.out_adj.remove(&vid);
        self.in_adj.remove(&vid);
        Ok((rec, removed))
    }

    fn unindex_tprop(&mut self, pid: PropertyId, e: EntityId) {
        if let Some(s) = self.tprop_index.get_mut(&pid) {
            s.remove(&e);
        }
    }

    pub fn get_prop(&self, e: EntityId, name: &str) -> Result<Option<&Value>> {
        let attrs = self.attrs(e).ok_or_else(|| unknown(e))?;
        Ok(attrs.props.get(name))
    }

    pub(crate) fn check_prop_name(&self, e: EntityId, name: &str) -> Result<()> {
        let attrs = self.attrs(e).ok_or_else(|| unknown(e))?;
        if attrs.tprops.contains_key(name) {
            return Err(Error::NamespaceClash {
                entity: e,
                name: name.into(),
                existing: "temporal",
            });
        }
        Ok(())
    }

    pub(crate) fn check_tprop_name(&self, e: EntityId, name: &str) -> Result<()> {
        let attrs = self.attrs(e).ok_or_else(|| unknown(e))?;
        if attrs.props.contains_key(name) {
            return Err(Error::NamespaceClash {
                entity: e,
                name: name.into(),
                existing: "non-temporal",
            });
        }
        Ok(())
    }

    pub(crate) fn set_prop(&mut self, e: EntityId, name: &str, value: Value) -> Result<()> {
        self.check_prop_name(e, name)?;
        self.attrs_mut(e)?.props.insert(name.to_owned(), value);
        Ok(())
    }

    /// Removes a property of either kind; returns the temporal handle when the
    /// name was a temporal property.
    pub(crate) fn rm_prop(&mut self, e: EntityId, name: &str) -> Result<Option<PropertyId>> {
        let attrs = self.attrs_mut(e)?;
        attrs.props.remove(name);
        let pid = attrs.tprops.remove(name);
        if let Some(pid) = pid {
            self.unindex_tprop(pid, e);
        }
        Ok(pid)
    }

    pub(crate) fn attach_tprop(&mut self, e: EntityId, name: &str, pid: PropertyId) -> Result<()> {
        self.check_tprop_name(e, name)?;
        self.attrs_mut(e)?.tprops.insert(name.to_owned(), pid);
        self.tprop_index.entry(pid).or_default().insert(e);
        Ok(())
    }

    /// Entities currently carrying temporal property `pid`, ascending.
    pub fn entities_with(&self, pid: PropertyId) -> Vec<EntityId> {
        self.tprop_index
            .get(&pid)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn has_tprop(&self, e: EntityId, name: &str) -> bool {
        self.attrs(e).is_some_and(|a| a.tprops.contains_key(name))
    }
}

fn unknown(e: EntityId) -> Error {
    match e {
        EntityId::Node(v) => Error::UnknownNode(v),
        EntityId::Edge(r) => Error::UnknownEdge(r),
    }
}

pub(crate) fn unknown_entity(e: EntityId) -> Error {
    unknown(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(ls: &[&str]) -> BTreeSet<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    fn strs(ls: &[&str]) -> Vec<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    /// Two intersections joined by roads, plus dangling roads out of and into
    /// each intersection through boundary nodes.
    fn two_intersections() -> GraphStore {
        let mut g = GraphStore::new();
        g.insert_node(1, labels(&["Intersection"]));
        g.insert_node(2, labels(&["Intersection"]));
        let mut eid = 1;
        g.insert_edge(eid, 1, 2, labels(&["Road"])).unwrap();
        eid += 1;
        g.insert_edge(eid, 2, 1, labels(&["Road"])).unwrap();
        eid += 1;
        let mut vid = 3;
        for hub in [1u64, 2] {
            for _ in 0..3 {
                g.insert_node(vid, labels(&["Boundary"]));
                g.insert_edge(eid, hub, vid, labels(&["Road"])).unwrap();
                eid += 1;
                g.insert_edge(eid, vid, hub, labels(&["Road"])).unwrap();
                eid += 1;
                vid += 1;
            }
        }
        g
    }

    #[test]
    fn first_ids_and_endpoints() {
        let mut g = GraphStore::new();
        let (vid, _) = g.next_ids();
        assert_eq!(vid, 1);
        g.insert_node(vid, labels(&["Intersection"]));
        g.insert_node(2, labels(&[]));
        g.insert_edge(1, 1, 2, labels(&["Road"])).unwrap();
        let r = g.edge(1).unwrap();
        assert_eq!((r.src, r.dst), (1, 2));
        assert!(matches!(
            g.insert_edge(2, 1, 99, labels(&["Road"])),
            Err(Error::UnknownNode(99))
        ));
    }

    #[test]
    fn label_and_direction_queries() {
        let g = two_intersections();
        assert_eq!(g.edge_count(), 14);
        assert_eq!(g.get_node(&[]).len(), 8);
        assert_eq!(g.get_node(&strs(&["Intersection"])), vec![1, 2]);
        assert!(g.get_node(&strs(&["NoSuchLabel"])).is_empty());
        let out = g.get_rel(1, Direction::Outgoing, &[]).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|e| g.edge(*e).unwrap().src == 1));
        assert_eq!(g.get_rel(1, Direction::Incoming, &[]).unwrap().len(), 4);
        assert_eq!(g.get_rel(1, Direction::Both, &strs(&["Road"])).unwrap().len(), 8);
        assert!(matches!(
            g.get_rel(77, Direction::Both, &[]),
            Err(Error::UnknownNode(77))
        ));
    }

    #[test]
    fn delete_cascades_to_edges() {
        let mut g = GraphStore::new();
        for v in 1..=4 {
            g.insert_node(v, labels(&[]));
        }
        g.insert_edge(1, 1, 2, labels(&[])).unwrap();
        g.insert_edge(2, 3, 1, labels(&[])).unwrap();
        g.insert_edge(3, 1, 4, labels(&[])).unwrap();
        g.insert_edge(4, 2, 3, labels(&[])).unwrap();
        let (_, removed) = g.remove_node(1).unwrap();
        assert_eq!(removed.len(), 3);
        assert_eq!(g.edge_count(), 1);
        assert!(matches!(g.remove_node(1), Err(Error::UnknownNode(1))));
    }

    #[test]
    fn parallel_edges_are_all_matched() {
        let mut g = GraphStore::new();
        g.insert_node(1, labels(&[]));
        g.insert_node(2, labels(&[]));
        g.insert_edge(1, 1, 2, labels(&["Road"])).unwrap();
        g.insert_edge(2, 1, 2, labels(&["Road"])).unwrap();
        g.insert_edge(3, 1, 2, labels(&["Rail"])).unwrap();
        assert_eq!(g.edges_between(1, 2, &strs(&["Road"])), vec![1, 2]);
    }

    #[test]
    fn property_namespace_is_shared() {
        let mut g = GraphStore::new();
        g.insert_node(1, labels(&[]));
        g.insert_node(2, labels(&[]));
        g.insert_edge(1, 1, 2, labels(&["Road"])).unwrap();
        let road = EntityId::Edge(1);
        g.set_prop(road, "name", Value::from("Haidian East Road")).unwrap();
        assert_eq!(
            g.get_prop(road, "name").unwrap(),
            Some(&Value::from("Haidian East Road"))
        );
        assert_eq!(g.get_prop(road, "missing").unwrap(), None);
        g.attach_tprop(road, "status", PropertyId(0)).unwrap();
        assert!(matches!(
            g.set_prop(road, "status", Value::Int(1)),
            Err(Error::NamespaceClash { .. })
        ));
        assert!(matches!(
            g.attach_tprop(road, "name", PropertyId(1)),
            Err(Error::NamespaceClash { .. })
        ));
        assert_eq!(g.entities_with(PropertyId(0)), vec![road]);
        assert_eq!(g.rm_prop(road, "status").unwrap(), Some(PropertyId(0)));
        assert!(g.entities_with(PropertyId(0)).is_empty());
    }

    #[derive(Clone, Debug)]
    enum Op {
        AddNode(u8),
        AddEdge(u8, u8),
        DelNode(u8),
    }

    fn arb_op() -> impl Strategy<Value = Op> {
        prop_oneof![
            2 => any::<u8>().prop_map(Op::AddNode),
            3 => (any::<u8>(), any::<u8>()).prop_map(|(a, b)| Op::AddEdge(a, b)),
            1 => any::<u8>().prop_map(Op::DelNode),
        ]
    }

    const LABELS: [&str; 3] = ["A", "B", "C"];

    proptest! {
        #[test]
        fn integrity_under_random_mutation(ops in prop::collection::vec(arb_op(), 1..120)) {
            let mut g = GraphStore::new();
            let mut live: Vec<u64> = Vec::new();
            let mut seen_vids = BTreeSet::new();
            for op in ops {
                match op {
                    Op::AddNode(mask) => {
                        let (vid, _) = g.next_ids();
                        prop_assert!(seen_vids.insert(vid), "id reused");
                        let ls = LABELS.iter().enumerate()
                            .filter(|(i, _)| mask & (1 << i) != 0)
                            .map(|(_, l)| l.to_string()).collect();
                        g.insert_node(vid, ls);
                        live.push(vid);
                    }
                    Op::AddEdge(a, b) if !live.is_empty() => {
                        let s = live[a as usize % live.len()];
                        let d = live[b as usize % live.len()];
                        let (_, eid) = g.next_ids();
                        g.insert_edge(eid, s, d, BTreeSet::new()).unwrap();
                    }
                    Op::DelNode(a) if !live.is_empty() => {
                        let v = live.remove(a as usize % live.len());
                        g.remove_node(v).unwrap();
                    }
                    _ => {}
                }
                for r in g.edges() {
                    prop_assert!(g.node(r.src).is_some() && g.node(r.dst).is_some());
                }
            }
            for mask in 0u8..8 {
                let want: Vec<String> = LABELS.iter().enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, l)| l.to_string()).collect();
                let naive: Vec<u64> = g.nodes()
                    .filter(|n| n.attrs.has_labels(&want))
                    .map(|n| n.vid).collect();
                let mut got = g.get_node(&want);
                got.sort();
                prop_assert_eq!(got, naive);
            }
        }
    }
}
