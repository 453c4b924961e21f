//! Write-ahead log.
//!
//! Frame: `len u32 | crc32 u32 | body`, where body is
//! `type u8 | txn u64 | seq u64 | payload`. A frame whose length runs past
//! the end of the file or whose checksum fails ends the readable log; the
//! reader reports its offset so recovery can truncate there.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::codec::{DecodeError, Reader, Writer};
use crate::error::{Error, Result};
use crate::graph::EntityId;
use crate::io::{Admission, IoGate};
use crate::model::{TimeInterval, Value};
use crate::schema::{PropertyDef, PropertyId};

use super::TxnId;

/// A buffered mutation, both applied at commit and logged.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    CreateNode {
        vid: u64,
        labels: Vec<String>,
    },
    CreateEdge {
        eid: u64,
        src: u64,
        dst: u64,
        labels: Vec<String>,
    },
    DeleteNode {
        vid: u64,
    },
    DeleteEdge {
        eid: u64,
    },
    SetProp {
        entity: EntityId,
        name: String,
        value: Value,
    },
    RemoveProp {
        entity: EntityId,
        name: String,
    },
    AttachTprop {
        entity: EntityId,
        name: String,
        pid: PropertyId,
    },
    /// `value: None` clears the interval.
    Temporal {
        entity: EntityId,
        pid: PropertyId,
        interval: TimeInterval,
        value: Option<Value>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Begin,
    Data(Op),
    Commit,
    /// Id watermarks at abort time, so ids handed out to the aborted
    /// transaction are not reissued after a restart.
    Abort {
        next_vid: u64,
        next_eid: u64,
    },
    Checkpoint {
        id: u64,
        next_txn: u64,
    },
    DefineProperty(PropertyDef),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub txn: TxnId,
    pub seq: u64,
    pub payload: Payload,
}

const FRAME_HEADER: usize = 8;

fn put_labels(w: &mut Writer, labels: &[String]) {
    w.put_u32(labels.len() as u32);
    for l in labels {
        w.put_str(l);
    }
}

fn get_labels(r: &mut Reader<'_>) -> Result<Vec<String>, DecodeError> {
    (0..r.u32()?).map(|_| r.str()).collect()
}

impl Record {
    fn type_byte(&self) -> u8 {
        match &self.payload {
            Payload::Begin => 1,
            Payload::Data(op) => match op {
                Op::CreateNode { .. } => 2,
                Op::CreateEdge { .. } => 3,
                Op::DeleteNode { .. } => 4,
                Op::DeleteEdge { .. } => 5,
                Op::SetProp { .. } => 6,
                Op::RemoveProp { .. } => 7,
                Op::AttachTprop { .. } => 8,
                Op::Temporal { .. } => 9,
            },
            Payload::Commit => 10,
            Payload::Abort { .. } => 11,
            Payload::Checkpoint { .. } => 12,
            Payload::DefineProperty(_) => 13,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u8(self.type_byte());
        w.put_u64(self.txn.0);
        w.put_u64(self.seq);
        match &self.payload {
            Payload::Begin | Payload::Commit => {}
            Payload::Abort { next_vid, next_eid } => {
                w.put_u64(*next_vid);
                w.put_u64(*next_eid);
            }
            Payload::Checkpoint { id, next_txn } => {
                w.put_u64(*id);
                w.put_u64(*next_txn);
            }
            Payload::DefineProperty(def) => def.encode(&mut w),
            Payload::Data(op) => match op {
                Op::CreateNode { vid, labels } => {
                    w.put_u64(*vid);
                    put_labels(&mut w, labels);
                }
                Op::CreateEdge { eid, src, dst, labels } => {
                    w.put_u64(*eid);
                    w.put_u64(*src);
                    w.put_u64(*dst);
                    put_labels(&mut w, labels);
                }
                Op::DeleteNode { vid } => w.put_u64(*vid),
                Op::DeleteEdge { eid } => w.put_u64(*eid),
                Op::SetProp { entity, name, value } => {
                    w.put_entity(*entity);
                    w.put_str(name);
                    w.put_value(value);
                }
                Op::RemoveProp { entity, name } => {
                    w.put_entity(*entity);
                    w.put_str(name);
                }
                Op::AttachTprop { entity, name, pid } => {
                    w.put_entity(*entity);
                    w.put_str(name);
                    w.put_u32(pid.0);
                }
                Op::Temporal {
                    entity,
                    pid,
                    interval,
                    value,
                } => {
                    w.put_entity(*entity);
                    w.put_u32(pid.0);
                    w.put_interval(*interval);
                    w.put_opt_value(value.as_ref());
                }
            },
        }
        let body = w.into_inner();
        let mut frame = Vec::with_capacity(FRAME_HEADER + body.len());
        frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
        frame.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        frame.extend_from_slice(&body);
        frame
    }

    fn decode_body(body: &[u8]) -> Result<Record, DecodeError> {
        let mut r = Reader::new(body);
        let ty = r.u8()?;
        let txn = TxnId(r.u64()?);
        let seq = r.u64()?;
        let data = |op| Payload::Data(op);
        let payload = match ty {
            1 => Payload::Begin,
            2 => data(Op::CreateNode {
                vid: r.u64()?,
                labels: get_labels(&mut r)?,
            }),
            3 => data(Op::CreateEdge {
                eid: r.u64()?,
                src: r.u64()?,
                dst: r.u64()?,
                labels: get_labels(&mut r)?,
            }),
            4 => data(Op::DeleteNode { vid: r.u64()? }),
            5 => data(Op::DeleteEdge { eid: r.u64()? }),
            6 => data(Op::SetProp {
                entity: r.entity()?,
                name: r.str()?,
                value: r.value()?,
            }),
            7 => data(Op::RemoveProp {
                entity: r.entity()?,
                name: r.str()?,
            }),
            8 => data(Op::AttachTprop {
                entity: r.entity()?,
                name: r.str()?,
                pid: PropertyId(r.u32()?),
            }),
            9 => data(Op::Temporal {
                entity: r.entity()?,
                pid: PropertyId(r.u32()?),
                interval: r.interval()?,
                value: r.opt_value()?,
            }),
            10 => Payload::Commit,
            11 => Payload::Abort {
                next_vid: r.u64()?,
                next_eid: r.u64()?,
            },
            12 => Payload::Checkpoint {
                id: r.u64()?,
                next_txn: r.u64()?,
            },
            13 => Payload::DefineProperty(PropertyDef::decode(&mut r)?),
            t => return Err(DecodeError::BadTag(t)),
        };
        if !r.is_empty() {
            return Err(DecodeError::Truncated);
        }
        Ok(Record { txn, seq, payload })
    }
}

/// Result of scanning a log file.
#[derive(Debug, Default)]
pub struct Scan {
    pub records: Vec<Record>,
    /// Length of the valid prefix.
    pub valid_len: u64,
    /// Why the scan stopped early, if it did.
    pub damage: Option<String>,
}

pub fn scan(bytes: &[u8]) -> Scan {
    let mut out = Scan::default();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < FRAME_HEADER {
            out.damage = Some(format!("torn frame header at offset {pos}"));
            break;
        }
        let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(rest[4..8].try_into().unwrap());
        let Some(body) = rest.get(FRAME_HEADER..FRAME_HEADER + len) else {
            out.damage = Some(format!("torn record at offset {pos}"));
            break;
        };
        if crc32fast::hash(body) != crc {
            out.damage = Some(format!("checksum mismatch at offset {pos}"));
            break;
        }
        match Record::decode_body(body) {
            Ok(rec) => out.records.push(rec),
            Err(e) => {
                out.damage = Some(format!("undecodable record at offset {pos}: {e}"));
                break;
            }
        }
        pos += FRAME_HEADER + len;
        out.valid_len = pos as u64;
    }
    out
}

/// Appender for the log file. Every frame is one admitted write.
pub struct Wal {
    path: PathBuf,
    file: Arc<File>,
    gate: Arc<IoGate>,
    next_seq: u64,
    bytes: u64,
}

impl Wal {
    /// Opens (or creates) the log, drops any damaged tail and returns the
    /// intact records.
    pub fn open(path: &Path, gate: Arc<IoGate>) -> Result<(Wal, Scan)> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let scan = scan(&bytes);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        if scan.valid_len < bytes.len() as u64 {
            log::warn!(
                "truncating log {} at {}: {}",
                path.display(),
                scan.valid_len,
                scan.damage.as_deref().unwrap_or("trailing bytes")
            );
            file.set_len(scan.valid_len)?;
            file.sync_all()?;
        }
        let next_seq = scan.records.last().map_or(1, |r| r.seq + 1);
        let wal = Wal {
            path: path.to_path_buf(),
            file: Arc::new(file),
            gate,
            next_seq,
            bytes: scan.valid_len,
        };
        Ok((wal, scan))
    }

    pub fn append(&mut self, txn: TxnId, payload: Payload) -> Result<u64> {
        let seq = self.next_seq;
        let frame = Record { txn, seq, payload }.encode();
        match self.gate.admit()? {
            Admission::Full => (&*self.file).write_all(&frame)?,
            Admission::Torn(n) => {
                (&*self.file).write_all(&frame[..n.min(frame.len())])?;
                return Err(Error::Crashed);
            }
        }
        self.next_seq += 1;
        self.bytes += frame.len() as u64;
        Ok(seq)
    }

    pub fn sync(&mut self) -> Result<()> {
        self.file.sync_data()?;
        Ok(())
    }

    /// The current log file, for syncing without holding the appender.
    pub fn handle(&self) -> Arc<File> {
        self.file.clone()
    }

    /// Sequence number of the last appended record.
    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }

    /// Atomically replaces the log with a single record.
    pub fn restart_with(&mut self, txn: TxnId, payload: Payload) -> Result<()> {
        let seq = self.next_seq;
        let frame = Record { txn, seq, payload }.encode();
        self.gate.write_atomic(&self.path, &frame)?;
        self.file = Arc::new(OpenOptions::new().append(true).open(&self.path)?);
        self.next_seq += 1;
        self.bytes = frame.len() as u64;
        Ok(())
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }
}
