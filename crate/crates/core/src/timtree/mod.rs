//! Temporal Interval Merge Tree.
//!
//! Each temporal property owns a sequence of Time Span Chunks whose ranges
//! tile `[0, max_end)`. Writes land in the property's Global Memtable. A
//! flush routes the part of every update that falls before `max_end` into
//! the Local Memtables of the chunks it touches and packages the rest into a
//! new level-0 file covering `[max_end, new_end)`. Open-ended values keep
//! their tail past `new_end` in memory, so an interval that outlives several
//! flushes is stored as one item per file.
//!
//! Levels 0..=4 hold at most one Unstable File each; two files meeting at a
//! level are merged into one file a level up, and level 5 holds Stable
//! Files. Reads overlay Global Memtable, then Local Memtable, then disk.

pub mod catalog;
mod chunk_file;
mod memtable;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::{Mutex, RwLock};

use crate::error::{Error, Result};
use crate::graph::EntityId;
use crate::io::IoGate;
use crate::model::{Chronon, TimeInterval, TimeIntervalSeries, Value};
use crate::schema::{PropertyDef, PropertyId, PropertySpec};

pub use catalog::ChunkDesc;
use catalog::{BufferImage, CatalogImage, PropertyBuffers};
use chunk_file::{ChunkFile, ChunkWriter};
use memtable::{Memtable, Overlay};

pub const LEVELS: usize = 6;
pub const STABLE_LEVEL: u8 = 5;

const CATALOG_FILE: &str = "catalog.meta";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimConfig {
    pub global_memtable_bytes: usize,
    pub local_memtable_bytes: usize,
    pub block_bytes: usize,
    pub compression_on: bool,
    /// Run level merges on a maintenance thread instead of inline after each
    /// flush.
    pub background_merge: bool,
}

impl Default for TimConfig {
    fn default() -> Self {
        TimConfig {
            global_memtable_bytes: 64 << 20,
            local_memtable_bytes: 10 << 20,
            block_bytes: 4096,
            compression_on: false,
            background_merge: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TpStats {
    pub items_on_disk: u64,
    pub bytes_on_disk: u64,
    pub raw_bytes: u64,
    /// `bytes_on_disk / raw_bytes`; `None` until something was ingested.
    pub amplification: Option<f64>,
    pub files_per_level: [usize; LEVELS],
    pub global_memtable_bytes: usize,
    pub local_memtable_bytes: usize,
    pub block_reads: u64,
}

#[derive(Clone)]
struct Chunk {
    desc: ChunkDesc,
    file: Arc<ChunkFile>,
    local: Arc<Memtable>,
}

struct PropState {
    def: PropertyDef,
    chunks: Vec<Chunk>,
    global: Memtable,
    frozen: Option<Arc<Memtable>>,
}

impl PropState {
    fn max_end(&self) -> Chronon {
        self.chunks.last().map_or(Chronon::ZERO, |c| c.desc.range.end())
    }

    /// Chunks whose range overlaps `iv`.
    fn overlapping(&self, iv: &TimeInterval) -> std::ops::Range<usize> {
        let lo = self.chunks.partition_point(|c| c.desc.range.end() <= iv.start());
        let hi = self.chunks.partition_point(|c| c.desc.range.start() < iv.end());
        lo..hi.max(lo)
    }
}

#[derive(Default)]
struct State {
    props: BTreeMap<PropertyId, PropState>,
    names: HashMap<String, PropertyId>,
    next_file_id: u64,
    global_bytes: usize,
    retained_bytes: usize,
    dirty: bool,
    raw_bytes: u64,
}

impl State {
    fn prop(&self, pid: PropertyId) -> Result<&PropState> {
        self.props
            .get(&pid)
            .ok_or_else(|| Error::UnknownProperty(pid.to_string()))
    }

    fn catalog_image(&self) -> CatalogImage {
        CatalogImage {
            next_file_id: self.next_file_id,
            properties: self
                .props
                .values()
                .map(|p| (p.def.clone(), p.chunks.iter().map(|c| c.desc).collect()))
                .collect(),
        }
    }

    fn recount_global(&mut self) {
        self.global_bytes = self.props.values().map(|p| p.global.bytes()).sum();
    }
}

struct Inner {
    dir: PathBuf,
    config: TimConfig,
    gate: Arc<IoGate>,
    state: RwLock<State>,
    maintenance: Mutex<()>,
    reads: Arc<AtomicU64>,
}

pub struct TimTree {
    inner: Arc<Inner>,
    merger: Mutex<Option<(Sender<()>, JoinHandle<()>)>>,
}

/// Everything needed to answer reads for one entity of one property,
/// captured under the state lock and evaluated without it.
struct View {
    chunks: Vec<(TimeInterval, Arc<ChunkFile>, Option<Overlay>)>,
    tail: TimeInterval,
    frozen: Option<Overlay>,
    global: Option<Overlay>,
    entity: EntityId,
}

impl View {
    fn history(&self, iv: TimeInterval) -> Result<Overlay> {
        let mut out = Overlay::new();
        for (range, file, _) in &self.chunks {
            if !range.overlaps(&iv) {
                continue;
            }
            for (x, v) in file.lookup(self.entity, iv)? {
                out.push_back(x, v);
            }
        }
        for (range, _, local) in &self.chunks {
            if let (true, Some(l)) = (range.overlaps(&iv), local) {
                out.overlay(&l.slice(iv));
            }
        }
        for top in [&self.frozen, &self.global].into_iter().flatten() {
            out.overlay(&top.slice(iv));
        }
        Ok(out)
    }

    fn regions(&self) -> Vec<TimeInterval> {
        let mut r: Vec<TimeInterval> = self.chunks.iter().map(|(range, _, _)| *range).collect();
        r.push(self.tail);
        r
    }
}

fn present(s: &Overlay) -> TimeIntervalSeries {
    s.filter_map(|v| v.clone())
}

fn chunk_path(dir: &Path, file_id: u64) -> PathBuf {
    dir.join(format!("chunk-{file_id:08}.tim"))
}

/// Byte length of the update rendered as an events CSV line; the baseline
/// for the amplification ratio.
fn canonical_event_len(e: EntityId, name: &str, iv: TimeInterval, v: &Value) -> u64 {
    let kind = if e.is_node() { "node" } else { "edge" };
    let end = if iv.is_open() {
        "NOW".to_string()
    } else {
        iv.end().tick().to_string()
    };
    format!("{kind},{},{name},{},{end},{v}\n", e.id(), iv.start().tick()).len() as u64
}

impl TimTree {
    pub fn open(dir: &Path, config: TimConfig, gate: Arc<IoGate>) -> Result<Self> {
        if config.block_bytes < 128 {
            return Err(Error::Config("block_bytes must be at least 128".into()));
        }
        if config.global_memtable_bytes == 0 || config.local_memtable_bytes == 0 {
            return Err(Error::Config("memtable bounds must be positive".into()));
        }
        fs::create_dir_all(dir)?;
        let reads = Arc::new(AtomicU64::new(0));
        let mut state = State::default();
        let cat_path = dir.join(CATALOG_FILE);
        let image = if cat_path.exists() {
            CatalogImage::decode(&fs::read(&cat_path)?)?
        } else {
            CatalogImage::default()
        };
        state.next_file_id = image.next_file_id;
        let mut live = std::collections::HashSet::new();
        for (def, descs) in image.properties {
            let mut chunks = Vec::with_capacity(descs.len());
            for desc in descs {
                let file = ChunkFile::open(&chunk_path(dir, desc.file_id), reads.clone())?;
                live.insert(desc.file_id);
                chunks.push(Chunk {
                    desc,
                    file: Arc::new(file),
                    local: Arc::new(Memtable::new()),
                });
            }
            state.names.insert(def.name.clone(), def.id);
            state.props.insert(
                def.id,
                PropState {
                    def,
                    chunks,
                    global: Memtable::new(),
                    frozen: None,
                },
            );
        }
        remove_orphans(dir, &live)?;
        let inner = Arc::new(Inner {
            dir: dir.to_path_buf(),
            config,
            gate,
            state: RwLock::new(state),
            maintenance: Mutex::new(()),
            reads,
        });
        let merger = if inner.config.background_merge {
            let (tx, rx) = mpsc::channel::<()>();
            let worker = inner.clone();
            let handle = std::thread::Builder::new()
                .name("timtree-merge".into())
                .spawn(move || {
                    while rx.recv().is_ok() {
                        while rx.try_recv().is_ok() {}
                        if let Err(e) = worker.merge_levels() {
                            log::warn!("background merge failed: {e}");
                        }
                    }
                })?;
            Some((tx, handle))
        } else {
            None
        };
        Ok(TimTree {
            inner,
            merger: Mutex::new(merger),
        })
    }

    pub fn config(&self) -> &TimConfig {
        &self.inner.config
    }

    pub fn define(&self, spec: PropertySpec) -> Result<PropertyDef> {
        let _m = self.inner.maintenance.lock();
        let mut st = self.inner.state.write();
        if st.names.contains_key(&spec.name) {
            return Err(Error::DuplicateProperty(spec.name));
        }
        let id = PropertyId(st.props.keys().next_back().map_or(0, |p| p.0 + 1));
        let def = PropertyDef {
            id,
            name: spec.name,
            value_type: spec.value_type,
            scale: spec.scale,
            epoch: spec.epoch,
        };
        insert_def(&mut st, def.clone());
        if let Err(e) = self.inner.write_catalog(&st) {
            st.props.remove(&id);
            st.names.remove(&def.name);
            return Err(e);
        }
        Ok(def)
    }

    /// Re-installs a definition during log replay; a no-op when present.
    pub(crate) fn install_def(&self, def: PropertyDef) -> Result<()> {
        let _m = self.inner.maintenance.lock();
        let mut st = self.inner.state.write();
        if let Some(p) = st.props.get(&def.id) {
            if p.def == def {
                return Ok(());
            }
            return Err(Error::corrupt("log", format!("conflicting definition for {}", def.id)));
        }
        insert_def(&mut st, def);
        self.inner.write_catalog(&st)
    }

    pub fn property(&self, name: &str) -> Option<PropertyDef> {
        let st = self.inner.state.read();
        st.names.get(name).map(|pid| st.props[pid].def.clone())
    }

    pub fn property_by_id(&self, pid: PropertyId) -> Option<PropertyDef> {
        self.inner.state.read().props.get(&pid).map(|p| p.def.clone())
    }

    pub fn properties(&self) -> Vec<PropertyDef> {
        self.inner.state.read().props.values().map(|p| p.def.clone()).collect()
    }

    /// Stages `⟨e, tp, ī, v⟩` in the Global Memtable and flushes when the
    /// memtable bound is reached.
    pub fn write(&self, e: EntityId, pid: PropertyId, iv: TimeInterval, v: Value) -> Result<()> {
        self.stage(e, pid, iv, Some(v))?;
        self.maybe_flush()
    }

    /// Stages without the flush check; the commit path flushes once per
    /// transaction.
    pub(crate) fn stage(&self, e: EntityId, pid: PropertyId, iv: TimeInterval, v: Option<Value>) -> Result<()> {
        let mut st = self.inner.state.write();
        let st = &mut *st;
        let p = st
            .props
            .get_mut(&pid)
            .ok_or_else(|| Error::UnknownProperty(pid.to_string()))?;
        if let Some(v) = &v {
            if v.value_type() != p.def.value_type {
                return Err(Error::TypeMismatch {
                    property: p.def.name.clone(),
                    expected: p.def.value_type,
                    found: v.value_type(),
                });
            }
            st.raw_bytes += canonical_event_len(e, &p.def.name, iv, v);
        }
        let before = p.global.bytes();
        p.global.write(e, iv, v);
        st.global_bytes = (st.global_bytes + p.global.bytes()).saturating_sub(before);
        st.dirty = true;
        Ok(())
    }

    pub fn needs_flush(&self) -> bool {
        let st = self.inner.state.read();
        let bound = self.inner.config.global_memtable_bytes;
        st.dirty && st.global_bytes >= bound.max(st.retained_bytes + bound / 2)
    }

    pub fn maybe_flush(&self) -> Result<()> {
        if self.needs_flush() {
            self.flush()?;
        }
        Ok(())
    }

    /// Exports the Global Memtable (see module docs). A no-op when nothing
    /// was written since the last flush.
    pub fn flush(&self) -> Result<()> {
        let flushed = self.inner.flush()?;
        if flushed {
            match &*self.merger.lock() {
                Some((tx, _)) => {
                    let _ = tx.send(());
                }
                None => self.inner.merge_levels()?,
            }
        }
        Ok(())
    }

    /// Runs level merges until no level below 5 holds two files of the same
    /// property.
    pub fn merge_levels(&self) -> Result<()> {
        self.inner.merge_levels()
    }

    fn view(&self, e: EntityId, pid: PropertyId, iv: TimeInterval) -> Result<View> {
        let st = self.inner.state.read();
        let p = st.prop(pid)?;
        let chunks = p.chunks[p.overlapping(&iv)]
            .iter()
            .map(|c| (c.desc.range, c.file.clone(), c.local.get(e).cloned()))
            .collect();
        Ok(View {
            chunks,
            tail: TimeInterval::since(p.max_end())?,
            frozen: p.frozen.as_ref().and_then(|f| f.get(e).cloned()),
            global: p.global.get(e).cloned(),
            entity: e,
        })
    }

    /// The entity's series of `pid` restricted to `iv`.
    pub fn entity_history(&self, e: EntityId, pid: PropertyId, iv: TimeInterval) -> Result<TimeIntervalSeries> {
        let view = self.view(e, pid, iv)?;
        Ok(present(&view.history(iv)?))
    }

    /// The last entry of the entity's series, with its full (coalesced)
    /// interval.
    pub fn latest_entry(&self, e: EntityId, pid: PropertyId) -> Result<Option<(TimeInterval, Value)>> {
        let view = self.view(e, pid, TimeInterval::ALL)?;
        let regions = view.regions();
        let mut found = None;
        for (k, region) in regions.iter().enumerate().rev() {
            if let Some(last) = present(&view.history(*region)?).last() {
                found = Some((k, last.clone()));
                break;
            }
        }
        let Some((mut k, (mut iv, v))) = found else {
            return Ok(None);
        };
        while k > 0 && iv.start() == regions[k].start() {
            k -= 1;
            let h = present(&view.history(regions[k])?);
            match h.last() {
                Some((prev, pv)) if prev.end() == iv.start() && *pv == v => {
                    iv = TimeInterval::new(prev.start(), iv.end())?;
                }
                _ => break,
            }
        }
        Ok(Some((iv, v)))
    }

    /// Updates currently staged in memory for `pid`, split at chunk
    /// boundaries the way a flush would route them.
    pub fn staged_items(&self, pid: PropertyId) -> Result<Vec<(EntityId, TimeInterval, Option<Value>)>> {
        let st = self.inner.state.read();
        let p = st.prop(pid)?;
        let mut bounds: Vec<Chronon> = p.chunks.iter().map(|c| c.desc.range.end()).collect();
        bounds.dedup();
        let mut combined = p.frozen.as_deref().cloned().unwrap_or_default();
        combined = combined.overlaid_by(&p.global);
        let mut out = Vec::new();
        for (e, s) in combined.iter() {
            for (iv, v) in s.entries() {
                for piece in split_at(*iv, &bounds) {
                    out.push((*e, piece, v.clone()));
                }
            }
        }
        Ok(out)
    }

    pub fn chunks(&self, pid: PropertyId) -> Result<Vec<ChunkDesc>> {
        let st = self.inner.state.read();
        Ok(st.prop(pid)?.chunks.iter().map(|c| c.desc).collect())
    }

    /// Entry count of each chunk's Local Memtable, in chunk order.
    pub fn local_entries(&self, pid: PropertyId) -> Result<Vec<usize>> {
        let st = self.inner.state.read();
        Ok(st.prop(pid)?.chunks.iter().map(|c| c.local.entry_count()).collect())
    }

    pub fn block_reads(&self) -> u64 {
        self.inner.reads.load(Ordering::Relaxed)
    }

    pub fn stats(&self) -> TpStats {
        let st = self.inner.state.read();
        let mut s = TpStats {
            raw_bytes: st.raw_bytes,
            global_memtable_bytes: st.global_bytes,
            block_reads: self.block_reads(),
            ..Default::default()
        };
        for p in st.props.values() {
            for c in &p.chunks {
                s.items_on_disk += c.desc.item_count;
                s.bytes_on_disk += c.desc.bytes;
                s.files_per_level[c.desc.level as usize] += 1;
                s.local_memtable_bytes += c.local.bytes();
            }
        }
        if st.raw_bytes > 0 {
            s.amplification = Some(s.bytes_on_disk as f64 / st.raw_bytes as f64);
        }
        s
    }

    /// Serializes every Local Memtable and the Global Memtable remainder.
    pub(crate) fn buffer_image(&self, checkpoint: u64) -> BufferImage {
        let st = self.inner.state.read();
        BufferImage {
            checkpoint,
            raw_bytes: st.raw_bytes,
            properties: st
                .props
                .values()
                .map(|p| {
                    let mut global = p.frozen.as_deref().cloned().unwrap_or_default();
                    global = global.overlaid_by(&p.global);
                    PropertyBuffers {
                        property: p.def.id,
                        global,
                        locals: p
                            .chunks
                            .iter()
                            .filter(|c| !c.local.is_empty())
                            .map(|c| (c.desc.range, (*c.local).clone()))
                            .collect(),
                    }
                })
                .collect(),
        }
    }

    pub(crate) fn write_buffer_file(&self, path: &Path, checkpoint: u64) -> Result<()> {
        let image = self.buffer_image(checkpoint);
        self.inner.gate.write_atomic(path, &image.encode())
    }

    /// Restores memtables from a Buffer File. Saved Local Memtables are routed
    /// into the chunks that cover their range now, since merges may have
    /// replaced the original files.
    pub(crate) fn restore_buffer_file(&self, path: &Path) -> Result<()> {
        let image = BufferImage::decode(&fs::read(path)?)?;
        let mut st = self.inner.state.write();
        st.raw_bytes = image.raw_bytes;
        for pb in image.properties {
            let Some(p) = st.props.get_mut(&pb.property) else {
                return Err(Error::corrupt("buffer file", format!("unknown property {}", pb.property)));
            };
            p.global = pb.global.overlaid_by(&p.global);
            for (_, local) in pb.locals {
                route_into_locals(p, &local);
            }
        }
        st.recount_global();
        st.retained_bytes = st.global_bytes;
        Ok(())
    }

    /// Checks chunk tiling, item order and counterpart pairing.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let st = self.inner.state.read();
        for p in st.props.values() {
            let mut expect = Chronon::ZERO;
            for c in &p.chunks {
                if c.desc.range.start() != expect {
                    return Err(format!("{}: chunk {:?} does not start at {expect}", p.def.name, c.desc.range));
                }
                expect = c.desc.range.end();
                if c.file.footer().range != c.desc.range {
                    return Err(format!("{}: catalog and file ranges differ", p.def.name));
                }
                let items = c.file.items().map_err(|e| e.to_string())?;
                if items.len() as u64 != c.desc.item_count {
                    return Err(format!("{}: item count mismatch", p.def.name));
                }
                let sorted = items
                    .windows(2)
                    .all(|w| (w[0].entity, w[0].start) < (w[1].entity, w[1].start));
                if !sorted {
                    return Err(format!("{}: file {} is not sorted", p.def.name, c.desc.file_id));
                }
                for (_, s) in c.local.iter() {
                    if let Some(span) = s.span() {
                        if !c.desc.range.covers(&span) {
                            return Err(format!("{}: local memtable escapes its chunk", p.def.name));
                        }
                    }
                }
            }
            let unstable = |lvl: u8| p.chunks.iter().filter(|c| c.desc.level == lvl).count();
            if (0..STABLE_LEVEL).any(|l| unstable(l) > 1) && self.merger.lock().is_none() {
                return Err(format!("{}: more than one unstable file on a level", p.def.name));
            }
        }
        Ok(())
    }
}

impl Drop for TimTree {
    fn drop(&mut self) {
        if let Some((tx, handle)) = self.merger.lock().take() {
            drop(tx);
            let _ = handle.join();
        }
    }
}

fn insert_def(st: &mut State, def: PropertyDef) {
    st.names.insert(def.name.clone(), def.id);
    st.props.insert(
        def.id,
        PropState {
            def,
            chunks: Vec::new(),
            global: Memtable::new(),
            frozen: None,
        },
    );
}

fn remove_orphans(dir: &Path, live: &std::collections::HashSet<u64>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let orphan = if let Some(id) = name.strip_prefix("chunk-").and_then(|s| s.strip_suffix(".tim")) {
            id.parse::<u64>().map_or(true, |id| !live.contains(&id))
        } else {
            name.ends_with(".tmp")
        };
        if orphan {
            log::debug!("removing orphan {}", path.display());
            fs::remove_file(&path)?;
        }
    }
    Ok(())
}

/// Splits `iv` at every boundary strictly inside it.
fn split_at(iv: TimeInterval, bounds: &[Chronon]) -> Vec<TimeInterval> {
    let mut out = Vec::new();
    let mut start = iv.start();
    for &b in bounds {
        if b > start && b < iv.end() {
            out.push(TimeInterval::new(start, b).expect("split piece"));
            start = b;
        }
    }
    out.push(TimeInterval::new(start, iv.end()).expect("split piece"));
    out
}

fn route_into(chunks: &[Chunk], locals: &mut [Memtable], e: EntityId, iv: TimeInterval, v: &Option<Value>) {
    let lo = chunks.partition_point(|c| c.desc.range.end() <= iv.start());
    for (c, local) in chunks[lo..].iter().zip(&mut locals[lo..]) {
        let Some(x) = c.desc.range.intersect(&iv) else {
            break;
        };
        local.write(e, x, v.clone());
    }
}

fn route_into_locals(p: &mut PropState, m: &Memtable) {
    let mut locals: Vec<Memtable> = p.chunks.iter().map(|c| (*c.local).clone()).collect();
    for (e, s) in m.iter() {
        for (iv, v) in s.entries() {
            route_into(&p.chunks, &mut locals, *e, *iv, v);
        }
    }
    for (c, l) in p.chunks.iter_mut().zip(locals) {
        c.local = Arc::new(l);
    }
}

/// Output of the file-producing part of a flush for one property.
struct FlushPlan {
    pid: PropertyId,
    chunks: Vec<Chunk>,
    carry: Memtable,
    replaced: Vec<u64>,
}

impl Inner {
    fn alloc_file_id(&self) -> u64 {
        let mut st = self.state.write();
        let id = st.next_file_id;
        st.next_file_id += 1;
        id
    }

    fn write_catalog(&self, st: &State) -> Result<()> {
        self.write_catalog_image(&st.catalog_image())
    }

    fn write_catalog_image(&self, image: &CatalogImage) -> Result<()> {
        self.gate.write_atomic(&self.dir.join(CATALOG_FILE), &image.encode())
    }

    fn write_chunk(&self, writer: ChunkWriter, range: TimeInterval, level: u8) -> Result<Chunk> {
        let item_count = writer.item_count();
        let bytes = writer.finish();
        let file_id = self.alloc_file_id();
        let path = chunk_path(&self.dir, file_id);
        self.gate.write_atomic(&path, &bytes)?;
        let file = ChunkFile::open(&path, self.reads.clone())?;
        Ok(Chunk {
            desc: ChunkDesc {
                file_id,
                level,
                range,
                item_count,
                bytes: bytes.len() as u64,
            },
            file: Arc::new(file),
            local: Arc::new(Memtable::new()),
        })
    }

    fn new_writer(&self, pid: PropertyId, range: TimeInterval, level: u8) -> ChunkWriter {
        ChunkWriter::new(pid, range, level, self.config.compression_on, self.config.block_bytes)
    }

    /// Rewrites a chunk with its Local Memtable folded in.
    fn fold_local(&self, pid: PropertyId, c: &Chunk, local: &Memtable) -> Result<Chunk> {
        let mut series: BTreeMap<EntityId, Overlay> = c.file.entity_series()?.into_iter().collect();
        for (e, s) in local.iter() {
            series.entry(*e).or_default().overlay(s);
        }
        let mut w = self.new_writer(pid, c.desc.range, c.desc.level);
        for (e, s) in &series {
            let s = present(s);
            w.push_series(*e, s.entries().iter().map(|(iv, v)| (*iv, v)));
        }
        self.write_chunk(w, c.desc.range, c.desc.level)
    }

    fn plan_flush(&self, p_def: &PropertyDef, chunks: &[Chunk], frozen: &Memtable) -> Result<FlushPlan> {
        let pid = p_def.id;
        let max_end = chunks.last().map_or(Chronon::ZERO, |c| c.desc.range.end());
        let mut locals: Vec<Memtable> = chunks.iter().map(|c| (*c.local).clone()).collect();
        let mut tail: Vec<(EntityId, TimeInterval, Value)> = Vec::new();
        for (e, s) in frozen.iter() {
            for (iv, v) in s.entries() {
                if iv.start() < max_end {
                    let head = TimeInterval::new(iv.start(), iv.end().min(max_end))?;
                    route_into(chunks, &mut locals, *e, head, v);
                }
                if iv.end() > max_end {
                    if let Some(v) = v {
                        let rest = TimeInterval::new(iv.start().max(max_end), iv.end())?;
                        tail.push((*e, rest, v.clone()));
                    }
                }
            }
        }

        let mut out_chunks = Vec::with_capacity(chunks.len() + 1);
        let mut replaced = Vec::new();
        for (c, local) in chunks.iter().zip(locals) {
            if local.bytes() > self.config.local_memtable_bytes {
                out_chunks.push(self.fold_local(pid, c, &local)?);
                replaced.push(c.desc.file_id);
            } else {
                out_chunks.push(Chunk {
                    local: Arc::new(local),
                    ..c.clone()
                });
            }
        }

        let mut carry = Memtable::new();
        if !tail.is_empty() {
            let new_end = tail
                .iter()
                .map(|(_, iv, _)| if iv.is_open() { iv.start().tick() + 1 } else { iv.end().tick() })
                .max()
                .map(Chronon::new)
                .expect("non-empty tail");
            let range = TimeInterval::new(max_end, new_end)?;
            let mut w = self.new_writer(pid, range, 0);
            let mut i = 0;
            while i < tail.len() {
                let e = tail[i].0;
                let mut series = Vec::new();
                while i < tail.len() && tail[i].0 == e {
                    let (_, iv, v) = &tail[i];
                    if let Some(x) = iv.intersect(&range) {
                        series.push((x, v));
                    }
                    if iv.end() > new_end {
                        let rest = TimeInterval::new(new_end.max(iv.start()), iv.end())?;
                        carry.write(e, rest, Some(v.clone()));
                    }
                    i += 1;
                }
                w.push_series(e, series);
            }
            out_chunks.push(self.write_chunk(w, range, 0)?);
        }
        Ok(FlushPlan {
            pid,
            chunks: out_chunks,
            carry,
            replaced,
        })
    }

    fn flush(&self) -> Result<bool> {
        let _m = self.maintenance.lock();
        let work: Vec<(PropertyDef, Vec<Chunk>, Arc<Memtable>)> = {
            let mut st = self.state.write();
            if !st.dirty {
                return Ok(false);
            }
            st.dirty = false;
            let mut work = Vec::new();
            for p in st.props.values_mut() {
                if p.global.is_empty() {
                    continue;
                }
                let frozen = Arc::new(std::mem::take(&mut p.global));
                p.frozen = Some(frozen.clone());
                work.push((p.def.clone(), p.chunks.clone(), frozen));
            }
            st.recount_global();
            work
        };

        let planned: Result<Vec<FlushPlan>> = work
            .iter()
            .map(|(def, chunks, frozen)| self.plan_flush(def, chunks, frozen))
            .collect();
        let plans = match planned.and_then(|plans| {
            let mut image = self.state.read().catalog_image();
            for plan in &plans {
                if let Some((_, descs)) = image.properties.iter_mut().find(|(d, _)| d.id == plan.pid) {
                    *descs = plan.chunks.iter().map(|c| c.desc).collect();
                }
            }
            image.next_file_id = self.state.read().next_file_id;
            self.write_catalog_image(&image)?;
            Ok(plans)
        }) {
            Ok(plans) => plans,
            Err(e) => {
                let mut st = self.state.write();
                for p in st.props.values_mut() {
                    if let Some(f) = p.frozen.take() {
                        p.global = (*f).clone().overlaid_by(&p.global);
                    }
                }
                st.dirty = true;
                st.recount_global();
                return Err(e);
            }
        };

        let mut dead = Vec::new();
        {
            let mut st = self.state.write();
            for plan in plans {
                let p = st.props.get_mut(&plan.pid).expect("planned property exists");
                p.chunks = plan.chunks;
                p.global = plan.carry.overlaid_by(&p.global);
                p.frozen = None;
                dead.extend(plan.replaced);
            }
            st.recount_global();
            st.retained_bytes = st.global_bytes;
        }
        for id in dead {
            self.gate.remove(&chunk_path(&self.dir, id))?;
        }
        Ok(true)
    }

    fn merge_pair(&self, pid: PropertyId, a: &Chunk, b: &Chunk) -> Result<Chunk> {
        let range = TimeInterval::new(a.desc.range.start(), b.desc.range.end())?;
        let level = a.desc.level + 1;
        let mut parts: [BTreeMap<EntityId, Overlay>; 2] = Default::default();
        for (part, c) in parts.iter_mut().zip([a, b]) {
            *part = c.file.entity_series()?.into_iter().collect();
            for (e, s) in c.local.iter() {
                part.entry(*e).or_default().overlay(s);
            }
        }
        let [mut left, right] = parts;
        for (e, s) in right {
            let l = left.entry(e).or_default();
            for (iv, v) in s.entries() {
                l.push_back(*iv, v.clone());
            }
        }
        let mut w = self.new_writer(pid, range, level);
        for (e, s) in &left {
            let s = present(s);
            w.push_series(*e, s.entries().iter().map(|(iv, v)| (*iv, v)));
        }
        self.write_chunk(w, range, level)
    }

    fn merge_levels(&self) -> Result<()> {
        let _m = self.maintenance.lock();
        loop {
            let job = {
                let st = self.state.read();
                st.props.values().find_map(|p| {
                    p.chunks
                        .windows(2)
                        .position(|w| w[0].desc.level == w[1].desc.level && w[0].desc.level < STABLE_LEVEL)
                        .map(|i| (p.def.id, i, p.chunks[i].clone(), p.chunks[i + 1].clone()))
                })
            };
            let Some((pid, i, a, b)) = job else {
                return Ok(());
            };
            let merged = self.merge_pair(pid, &a, &b)?;
            let image = {
                let st = self.state.read();
                let mut image = st.catalog_image();
                if let Some((_, descs)) = image.properties.iter_mut().find(|(d, _)| d.id == pid) {
                    descs.splice(i..i + 2, [merged.desc]);
                }
                image
            };
            self.write_catalog_image(&image)?;
            {
                let mut st = self.state.write();
                let p = st.props.get_mut(&pid).expect("merged property exists");
                p.chunks.splice(i..i + 2, [merged]);
            }
            self.gate.remove(&chunk_path(&self.dir, a.desc.file_id))?;
            self.gate.remove(&chunk_path(&self.dir, b.desc.file_id))?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ValueType;

    fn iv(s: u64, e: u64) -> TimeInterval {
        TimeInterval::ticks(s, e).unwrap()
    }

    const NOW: u64 = u64::MAX;

    fn cfg() -> TimConfig {
        TimConfig {
            background_merge: false,
            block_bytes: 256,
            ..Default::default()
        }
    }

    fn tree(dir: &Path, config: TimConfig) -> TimTree {
        TimTree::open(dir, config, Arc::new(IoGate::unlimited())).unwrap()
    }

    fn s(x: &str) -> Value {
        Value::from(x)
    }

    fn status_fixture(t: &TimTree) -> (EntityId, PropertyId) {
        let pid = t.define(PropertySpec::new("status", ValueType::Str)).unwrap().id;
        let road = EntityId::Edge(1);
        t.write(road, pid, iv(480, 495), s("slow")).unwrap();
        t.write(road, pid, iv(495, 500), s("jam")).unwrap();
        t.write(road, pid, iv(500, 525), s("smooth")).unwrap();
        t.write(road, pid, iv(525, NOW), s("slow")).unwrap();
        (road, pid)
    }

    #[test]
    fn road_example_in_memory_and_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let t = tree(dir.path(), cfg());
        let (road, pid) = status_fixture(&t);
        t.write(road, pid, iv(498, NOW), s("jam")).unwrap();
        let want = TimeIntervalSeries::coalesce(vec![(iv(490, 495), s("slow")), (iv(495, NOW), s("jam"))]).unwrap();
        assert_eq!(t.entity_history(road, pid, iv(490, NOW)).unwrap(), want);
        t.flush().unwrap();
        assert_eq!(t.chunks(pid).unwrap().len(), 1);
        assert_eq!(t.entity_history(road, pid, iv(490, NOW)).unwrap(), want);
        assert_eq!(t.latest_entry(road, pid).unwrap(), Some((iv(495, NOW), s("jam"))));
        assert!(t.entity_history(road, pid, iv(0, 100)).unwrap().is_empty());
        t.check_invariants().unwrap();
    }

    #[test]
    fn type_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = tree(dir.path(), cfg());
        let pid = t.define(PropertySpec::new("travel_time", ValueType::Int)).unwrap().id;
        let err = t.write(EntityId::Edge(1), pid, iv(0, 5), s("fast")).unwrap_err();
        assert!(matches!(err, Error::TypeMismatch { .. }));
        assert!(matches!(
            t.define(PropertySpec::new("travel_time", ValueType::Int)),
            Err(Error::DuplicateProperty(_))
        ));
    }

    #[test]
    fn staged_items_split_at_chunk_boundaries() {
        let dir = tempfile::tempdir().unwrap();
        let t = tree(dir.path(), cfg());
        let pid = t.define(PropertySpec::new("v", ValueType::Int)).unwrap().id;
        let e = EntityId::Node(1);
        // Flush without merging to keep two level-0 chunks.
        t.write(e, pid, iv(0, 100), Value::Int(1)).unwrap();
        t.inner.flush().unwrap();
        t.write(e, pid, iv(100, 200), Value::Int(2)).unwrap();
        t.inner.flush().unwrap();
        let ranges: Vec<_> = t.chunks(pid).unwrap().iter().map(|c| c.range).collect();
        assert_eq!(ranges, vec![iv(0, 100), iv(100, 200)]);
        t.write(e, pid, iv(90, 110), Value::Int(9)).unwrap();
        let staged = t.staged_items(pid).unwrap();
        assert_eq!(
            staged,
            vec![(e, iv(90, 100), Some(Value::Int(9))), (e, iv(100, 110), Some(Value::Int(9)))]
        );
        t.merge_levels().unwrap();
        let ranges: Vec<_> = t.chunks(pid).unwrap().iter().map(|c| c.range).collect();
        assert_eq!(ranges, vec![iv(0, 200)]);
    }

    #[test]
    fn appends_beyond_files_become_one_sorted_level0_file() {
        let dir = tempfile::tempdir().unwrap();
        let t = tree(dir.path(), cfg());
        let pid = t.define(PropertySpec::new("v", ValueType::Int)).unwrap().id;
        for id in (1..=50u64).rev() {
            t.write(EntityId::Node(id), pid, iv(10, 20), Value::Int(id as i64)).unwrap();
        }
        t.flush().unwrap();
        let c = t.chunks(pid).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].level, c[0].item_count, c[0].range), (0, 50, iv(0, 20)));
        t.check_invariants().unwrap();
        t.flush().unwrap();
        assert_eq!(t.chunks(pid).unwrap(), c, "empty flush is a no-op");
    }

    #[test]
    fn historical_update_goes_to_local_memtable() {
        let dir = tempfile::tempdir().unwrap();
        let t = tree(dir.path(), cfg());
        let pid = t.define(PropertySpec::new("v", ValueType::Int)).unwrap().id;
        let e = EntityId::Node(1);
        t.write(e, pid, iv(0, 100), Value::Int(1)).unwrap();
        t.flush().unwrap();
        let before = t.chunks(pid).unwrap();
        t.write(e, pid, iv(40, 50), Value::Int(2)).unwrap();
        t.flush().unwrap();
        assert_eq!(t.chunks(pid).unwrap(), before);
        assert_eq!(t.local_entries(pid).unwrap(), vec![1]);
        let h = t.entity_history(e, pid, iv(0, 100)).unwrap();
        assert_eq!(h.len(), 3);
    }

    #[test]
    fn oversized_local_memtable_is_folded_into_a_new_file() {
        let dir = tempfile::tempdir().unwrap();
        let t = tree(
            dir.path(),
            TimConfig {
                local_memtable_bytes: 200,
                ..cfg()
            },
        );
        let pid = t.define(PropertySpec::new("v", ValueType::Int)).unwrap().id;
        let e = EntityId::Node(1);
        t.write(e, pid, iv(0, 100), Value::Int(1)).unwrap();
        t.flush().unwrap();
        let old = t.chunks(pid).unwrap()[0];
        for k in 0..10u64 {
            t.write(e, pid, iv(k * 10, k * 10 + 5), Value::Int(k as i64 + 10)).unwrap();
        }
        t.flush().unwrap();
        let new = t.chunks(pid).unwrap()[0];
        assert_ne!(new.file_id, old.file_id);
        assert_eq!(new.range, old.range);
        assert_eq!(t.local_entries(pid).unwrap(), vec![0]);
        assert!(!chunk_path(dir.path(), old.file_id).exists());
        assert_eq!(t.entity_history(e, pid, iv(0, 100)).unwrap().len(), 20);
    }

    #[test]
    fn two_level0_files_merge_and_coalesce_across_the_seam() {
        let dir = tempfile::tempdir().unwrap();
        let t = tree(dir.path(), cfg());
        let pid = t.define(PropertySpec::new("v", ValueType::Int)).unwrap().id;
        let e = EntityId::Node(1);
        t.write(e, pid, iv(1, 4), Value::Int(7)).unwrap();
        t.inner.flush().unwrap();
        t.write(e, pid, iv(4, 9), Value::Int(7)).unwrap();
        t.inner.flush().unwrap();
        assert_eq!(t.stats().files_per_level[0], 2);
        t.merge_levels().unwrap();
        let st = t.stats();
        assert_eq!(st.files_per_level[0], 0);
        assert_eq!(st.files_per_level[1], 1);
        let c = t.chunks(pid).unwrap();
        assert_eq!(c[0].item_count, 1);
        assert_eq!(
            t.entity_history(e, pid, TimeInterval::ALL).unwrap().entries(),
            &[(iv(1, 9), Value::Int(7))]
        );
    }

    #[test]
    fn cascade_reaches_a_stable_file() {
        let dir = tempfile::tempdir().unwrap();
        let t = tree(dir.path(), cfg());
        let pid = t.define(PropertySpec::new("v", ValueType::Int)).unwrap().id;
        for k in 0..32u64 {
            t.write(EntityId::Node(1), pid, iv(k * 10, k * 10 + 10), Value::Int(k as i64)).unwrap();
            t.flush().unwrap();
            t.check_invariants().unwrap();
        }
        let st = t.stats();
        assert_eq!(st.files_per_level, [0, 0, 0, 0, 0, 1]);
        assert_eq!(t.entity_history(EntityId::Node(1), pid, iv(0, 320)).unwrap().len(), 32);
    }

    #[test]
    fn open_interval_spans_files_and_reconstructs() {
        let dir = tempfile::tempdir().unwrap();
        let t = tree(dir.path(), cfg());
        let pid = t.define(PropertySpec::new("v", ValueType::Int)).unwrap().id;
        let (a, b) = (EntityId::Node(1), EntityId::Node(2));
        t.write(a, pid, iv(5, NOW), Value::Int(1)).unwrap();
        t.write(b, pid, iv(0, 30), Value::Int(2)).unwrap();
        t.flush().unwrap();
        t.write(b, pid, iv(30, 60), Value::Int(3)).unwrap();
        t.flush().unwrap();
        t.write(b, pid, iv(60, 90), Value::Int(4)).unwrap();
        t.inner.flush().unwrap();
        assert!(t.chunks(pid).unwrap().len() >= 2);
        assert_eq!(
            t.entity_history(a, pid, TimeInterval::ALL).unwrap().entries(),
            &[(iv(5, NOW), Value::Int(1))]
        );
        assert_eq!(t.latest_entry(a, pid).unwrap(), Some((iv(5, NOW), Value::Int(1))));
        assert_eq!(t.latest_entry(b, pid).unwrap(), Some((iv(60, 90), Value::Int(4))));
    }

    #[test]
    fn reopen_restores_catalog_and_removes_orphans() {
        let dir = tempfile::tempdir().unwrap();
        let (pid, e) = {
            let t = tree(dir.path(), cfg());
            let pid = t.define(PropertySpec::new("v", ValueType::Int)).unwrap().id;
            let e = EntityId::Edge(3);
            t.write(e, pid, iv(0, 10), Value::Int(1)).unwrap();
            t.flush().unwrap();
            (pid, e)
        };
        fs::write(chunk_path(dir.path(), 999), b"junk").unwrap();
        let t = tree(dir.path(), cfg());
        assert!(!chunk_path(dir.path(), 999).exists());
        assert_eq!(t.entity_history(e, pid, iv(0, 10)).unwrap().len(), 1);
        assert_eq!(t.property("v").unwrap().id, pid);
    }

    #[test]
    fn buffer_file_roundtrip_restores_memtables() {
        let dir = tempfile::tempdir().unwrap();
        let buf = dir.path().join("buffer.buf");
        let e = EntityId::Node(1);
        let (pid, want) = {
            let t = tree(dir.path(), cfg());
            let pid = t.define(PropertySpec::new("v", ValueType::Int)).unwrap().id;
            t.write(e, pid, iv(0, 100), Value::Int(1)).unwrap();
            t.flush().unwrap();
            t.write(e, pid, iv(20, 30), Value::Int(5)).unwrap();
            t.flush().unwrap();
            t.write(e, pid, iv(90, NOW), Value::Int(8)).unwrap();
            t.write_buffer_file(&buf, 1).unwrap();
            (pid, t.entity_history(e, pid, TimeInterval::ALL).unwrap())
        };
        let t = tree(dir.path(), cfg());
        assert_ne!(t.entity_history(e, pid, TimeInterval::ALL).unwrap(), want);
        t.restore_buffer_file(&buf).unwrap();
        assert_eq!(t.entity_history(e, pid, TimeInterval::ALL).unwrap(), want);
    }

    #[test]
    fn compressed_mode_reads_back_identically() {
        for compression_on in [false, true] {
            let dir = tempfile::tempdir().unwrap();
            let t = tree(dir.path(), TimConfig { compression_on, ..cfg() });
            let pid = t.define(PropertySpec::new("v", ValueType::Int)).unwrap().id;
            for id in 0..20u64 {
                for k in 0..20u64 {
                    t.write(EntityId::Edge(id), pid, iv(k * 3, k * 3 + 2), Value::Int((id * k) as i64)).unwrap();
                }
            }
            t.flush().unwrap();
            for id in 0..20u64 {
                assert_eq!(t.entity_history(EntityId::Edge(id), pid, iv(0, 60)).unwrap().len(), 20);
            }
        }
    }

    #[test]
    fn amplification_is_undefined_when_empty() {
        let dir = tempfile::tempdir().unwrap();
        let t = tree(dir.path(), cfg());
        let st = t.stats();
        assert_eq!(st.items_on_disk, 0);
        assert_eq!(st.amplification, None);
    }
}
