//! CSV ingest.
//!
//! ```text
//! nodes   vid,labels,props_json
//! edges   eid,src,dst,labels,props_json
//! events  entity_kind,entity_id,property,start_tick,end_tick,value
//! ```
//!
//! Labels are `;`-separated. `end_tick` may be `NOW`. Event values are parsed
//! as integer, float or boolean when possible and as text otherwise; a
//! property's type is fixed by the first event that uses it.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use petg_core::graph::EntityId;
use petg_core::model::{Chronon, ChrononScale, TimeInterval, Value, ValueType};
use petg_core::schema::PropertySpec;
use petg_core::Database;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq)]
pub struct IngestOptions {
    /// Rows per transaction.
    pub batch: usize,
    /// Chronon length for properties created by ingest.
    pub chronon_secs: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            batch: 5000,
            chronon_secs: 60,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub nodes: u64,
    pub edges: u64,
    pub events: u64,
}

/// A malformed input row. Rows are numbered from 1, header excluded.
#[derive(Debug)]
pub struct SchemaError {
    pub file: String,
    pub row: u64,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} row {}: {}", self.file, self.row, self.message)
    }
}

impl std::error::Error for SchemaError {}

fn labels(s: &str) -> Vec<&str> {
    s.split(';').map(str::trim).filter(|l| !l.is_empty()).collect()
}

fn json_value(v: &serde_json::Value) -> Option<Value> {
    Some(match v {
        serde_json::Value::Bool(b) => Value::Bool(*b),
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Float(n.as_f64()?),
        },
        serde_json::Value::String(s) => Value::Str(s.clone()),
        _ => return None,
    })
}

/// Parses an event value: integer, float, boolean, else text.
pub fn parse_value(s: &str) -> Value {
    if let Ok(i) = s.parse::<i64>() {
        Value::Int(i)
    } else if let Ok(x) = s.parse::<f64>() {
        Value::Float(x)
    } else if let Ok(b) = s.parse::<bool>() {
        Value::Bool(b)
    } else {
        Value::Str(s.to_owned())
    }
}

struct Rows {
    file: String,
    reader: csv::Reader<std::fs::File>,
}

impl Rows {
    fn open(path: &Path, columns: usize) -> Result<Rows> {
        let file = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .with_context(|| format!("opening {file}"))?;
        let width = reader.headers()?.len();
        if width != columns {
            return Err(SchemaError {
                file,
                row: 0,
                message: format!("expected {columns} columns in header, found {width}"),
            }
            .into());
        }
        Ok(Rows { file, reader })
    }

    fn err(&self, row: u64, message: impl Into<String>) -> anyhow::Error {
        SchemaError {
            file: self.file.clone(),
            row,
            message: message.into(),
        }
        .into()
    }

    fn for_each(&mut self, mut f: impl FnMut(u64, &csv::StringRecord) -> std::result::Result<(), String>) -> Result<()> {
        let mut rec = csv::StringRecord::new();
        let mut row = 0;
        loop {
            match self.reader.read_record(&mut rec) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    row += 1;
                    f(row, &rec).map_err(|m| self.err(row, m))?;
                }
                Err(e) => return Err(self.err(row + 1, e.to_string())),
            }
        }
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &str) -> std::result::Result<T, String> {
    let raw = rec.get(i).ok_or_else(|| format!("missing {what}"))?;
    raw.trim().parse().map_err(|_| format!("bad {what} `{raw}`"))
}

fn props(rec: &csv::StringRecord, i: usize) -> std::result::Result<Vec<(String, Value)>, String> {
    let raw = rec.get(i).unwrap_or("").trim();
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    let v: serde_json::Value = serde_json::from_str(raw).map_err(|e| format!("bad props_json: {e}"))?;
    let obj = v.as_object().ok_or("props_json must be an object")?;
    obj.iter()
        .map(|(k, v)| json_value(v).map(|v| (k.clone(), v)).ok_or_else(|| format!("unsupported value for `{k}`")))
        .collect()
}

/// Loads the three files in batched transactions. `events` may be omitted.
pub fn ingest_csv(
    db: &Database,
    nodes: &Path,
    edges: &Path,
    events: Option<&Path>,
    opts: &IngestOptions,
) -> Result<IngestReport> {
    let batch = opts.batch.max(1);
    let mut report = IngestReport::default();
    let mut vids: HashMap<u64, u64> = HashMap::new();
    let mut eids: HashMap<u64, u64> = HashMap::new();

    let mut txn = db.begin();
    let mut rows = Rows::open(nodes, 3)?;
    rows.for_each(|_, rec| {
        let vid: u64 = field(rec, 0, "vid")?;
        let p = props(rec, 2)?;
        let id = txn.create_node(&labels(&rec[1])).map_err(|e| e.to_string())?;
        if vids.insert(vid, id).is_some() {
            return Err(format!("duplicate vid {vid}"));
        }
        for (k, v) in p {
            txn.set_prop(EntityId::Node(id), &k, v).map_err(|e| e.to_string())?;
        }
        report.nodes += 1;
        Ok(())
    })?;
    txn.commit()?;
    txn = db.begin();

    let mut rows = Rows::open(edges, 5)?;
    rows.for_each(|_, rec| {
        let eid: u64 = field(rec, 0, "eid")?;
        let src: u64 = field(rec, 1, "src")?;
        let dst: u64 = field(rec, 2, "dst")?;
        let (&s, &d) = match (vids.get(&src), vids.get(&dst)) {
            (Some(s), Some(d)) => (s, d),
            _ => return Err(format!("edge {eid} refers to an unknown node")),
        };
        let p = props(rec, 4)?;
        let id = txn.create_edge(s, d, &labels(&rec[3])).map_err(|e| e.to_string())?;
        if eids.insert(eid, id).is_some() {
            return Err(format!("duplicate eid {eid}"));
        }
        for (k, v) in p {
            txn.set_prop(EntityId::Edge(id), &k, v).map_err(|e| e.to_string())?;
        }
        report.edges += 1;
        Ok(())
    })?;
    txn.commit()?;
    txn = db.begin();

    if let Some(events) = events {
        let scale = ChrononScale::new(Duration::from_secs(opts.chronon_secs.max(1)))?;
        let mut rows = Rows::open(events, 6)?;
        let mut rec = csv::StringRecord::new();
        let mut row = 0;
        loop {
            match rows.reader.read_record(&mut rec) {
                Ok(false) => break,
                Ok(true) => row += 1,
                Err(e) => return Err(rows.err(row + 1, e.to_string())),
            }
            let parsed = (|| -> std::result::Result<(EntityId, String, TimeInterval, Value), String> {
                let id: u64 = field(&rec, 1, "entity_id")?;
                let e = match rec[0].trim() {
                    "node" => EntityId::Node(*vids.get(&id).ok_or(format!("unknown node {id}"))?),
                    "edge" => EntityId::Edge(*eids.get(&id).ok_or(format!("unknown edge {id}"))?),
                    k => return Err(format!("entity_kind must be node or edge, found `{k}`")),
                };
                let start: u64 = field(&rec, 3, "start_tick")?;
                let end = match rec[4].trim() {
                    "NOW" => Chronon::NOW,
                    _ => Chronon::from_raw(field(&rec, 4, "end_tick")?),
                };
                let iv = TimeInterval::new(Chronon::from_raw(start), end).map_err(|e| e.to_string())?;
                Ok((e, rec[2].trim().to_owned(), iv, parse_value(&rec[5])))
            })();
            let (e, name, iv, v) = parsed.map_err(|m| rows.err(row, m))?;
            let def = match db.property(&name) {
                Some(d) => d,
                None => db.define_property(PropertySpec::new(name.as_str(), v.value_type()).scale(scale))?,
            };
            let v = match (def.value_type, v) {
                (ValueType::Float, Value::Int(i)) => Value::Float(i as f64),
                (ValueType::Str, v) if v.value_type() != ValueType::Str => Value::Str(rec[5].to_owned()),
                (_, v) => v,
            };
            txn.set_tp(e, &name, iv, v).map_err(|err| rows.err(row, err.to_string()))?;
            report.events += 1;
            if report.events % batch as u64 == 0 {
                std::mem::replace(&mut txn, db.begin()).commit()?;
            }
        }
    }
    txn.commit()?;
    Ok(report)
}
